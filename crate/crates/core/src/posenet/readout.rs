//! Spatial softmax, expectation readout and temporal gating of 3D heatmaps.

use nalgebra::Point3;

use super::tensor::VoxelTensor;
use crate::scalar::Scalar;
use crate::skeleton::{Skeleton3D, NUM_JOINTS};
use crate::volumes::{FeatureVolume, UnposeTransform, VolumeGrid, VolumeKind};

/// Per-channel softmax over all voxels. Exponentials and the normalizer are
/// accumulated in double precision.
pub fn spatial_softmax<T: Scalar>(logits: &VoxelTensor<T>) -> VoxelTensor<T> {
    let (n, c) = (logits.voxels(), logits.channels());
    let data = logits.data();
    let mut out = VoxelTensor::zeros(logits.side(), c);
    let mut exps = vec![0.0f64; n];
    for ch in 0..c {
        let max = (0..n).map(|v| data[v * c + ch].to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (v, e) in exps.iter_mut().enumerate() {
            *e = (data[v * c + ch].to_f64_lossy() - max).exp();
            sum += *e;
        }
        let o = out.data_mut();
        for (v, e) in exps.iter().enumerate() {
            o[v * c + ch] = T::lit(e / sum);
        }
    }
    out
}

/// Expected standard-frame position and peak probability of every channel.
pub fn expectation<T: Scalar>(p: &VoxelTensor<T>, grid: &VolumeGrid) -> Vec<(Point3<f64>, f64)> {
    let c = p.channels();
    let data = p.data();
    let mut sums = vec![[0.0f64; 3]; c];
    let mut peaks = vec![0.0f64; c];
    for v in 0..p.voxels() {
        let x = grid.center_standard(v);
        for ch in 0..c {
            let w = data[v * c + ch].to_f64_lossy();
            sums[ch][0] += w * x.x;
            sums[ch][1] += w * x.y;
            sums[ch][2] += w * x.z;
            peaks[ch] = peaks[ch].max(w);
        }
    }
    sums.into_iter().zip(peaks).map(|(s, peak)| (Point3::new(s[0], s[1], s[2]), peak)).collect()
}

/// Expected joint positions in world coordinates with the per-joint peak
/// probability as confidence.
pub fn soft_argmax<T: Scalar>(p: &FeatureVolume<T>, grid: &VolumeGrid, unpose: &UnposeTransform) -> Skeleton3D {
    assert_eq!(p.channels(), NUM_JOINTS, "soft_argmax expects one channel per joint");
    let readout = expectation(&p.values, grid);
    let mut joints = [Point3::origin(); NUM_JOINTS];
    let mut confidence = [0.0; NUM_JOINTS];
    for (j, (x, conf)) in readout.into_iter().enumerate() {
        joints[j] = unpose.inverse_apply(&x);
        confidence[j] = conf;
    }
    Skeleton3D { id: p.person, joints, confidence }
}

/// Zero every voxel whose world-space center lies at least `radius` away from
/// the previous frame's position of the same joint.
pub fn temporal_filter<T: Scalar>(heat: &FeatureVolume<T>, grid: &VolumeGrid, unpose: &UnposeTransform, previous: &Skeleton3D, radius: f64) -> FeatureVolume<T> {
    let mut out = heat.clone();
    if radius.is_infinite() {
        return out;
    }
    let c = out.channels();
    let data = out.values.data_mut();
    for v in 0..grid.voxels() {
        let x = grid.center_world(v, unpose);
        for (j, prev) in previous.joints.iter().enumerate().take(c) {
            if (x - prev).norm() >= radius {
                data[v * c + j] = T::zero();
            }
        }
    }
    out.kind = VolumeKind::Heatmap3D;
    out
}
