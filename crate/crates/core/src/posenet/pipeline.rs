//! Stage-level forward passes and the end-to-end training objective.

use nalgebra::Point3;

use super::loss::{focal_loss_logits, l1_loss, sigmoid, GtHeatmap, LossConfig};
use super::net::{PoseNet, StageCache};
use super::readout::{expectation, spatial_softmax};
use super::tensor::VoxelTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volumes::{FeatureVolume, UnposeTransform, VolumeGrid, VolumeKind};

/// Network inputs and supervision for one person in one scene.
#[derive(Debug, Clone)]
pub struct TrainingSample<T> {
    /// Keypoint feature volume.
    pub features: VoxelTensor<T>,
    /// Own anchor field (pelvis, neck).
    pub anchor_own: VoxelTensor<T>,
    /// Fused anchor field of the other people, not negated.
    pub anchor_others: VoxelTensor<T>,
    pub heatmap: GtHeatmap,
    /// Target joints, world frame.
    pub target: Vec<Point3<f64>>,
    pub unpose: UnposeTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub focal: f64,
    pub l1: f64,
    pub total: f64,
    /// Read-out joints, world frame.
    pub predicted: Vec<Point3<f64>>,
}

impl LossBreakdown {
    /// Mean per-joint Euclidean error against `target` (meters).
    pub fn mpjpe(&self, target: &[Point3<f64>]) -> f64 {
        self.predicted.iter().zip(target).map(|(a, b)| (a - b).norm()).sum::<f64>() / target.len().max(1) as f64
    }
}

struct Forward<T> {
    hem_logits: VoxelTensor<T>,
    hem_cache: StageCache<T>,
    heat: VoxelTensor<T>,
    klm_cache: StageCache<T>,
    prob: VoxelTensor<T>,
    standard: Vec<Point3<f64>>,
}

impl<T: Scalar> PoseNet<T> {
    fn check_features(&self, f: &VoxelTensor<T>) -> Result<()> {
        if f.channels() != self.config.joints {
            return Err(Error::ShapeMismatch { expected: format!("{} feature channels", self.config.joints), actual: f.channels().to_string() });
        }
        self.hem.check_input(f)
    }

    /// 3D heatmaps of every visible person, squashed to `[0, 1]`.
    pub fn hem_forward(&self, f: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
        self.check_features(&f.values)?;
        let (logits, _) = self.hem.forward(&f.values);
        let values = logits.map(|z| T::lit(sigmoid(z.to_f64_lossy())));
        Ok(FeatureVolume { kind: VolumeKind::Heatmap3D, person: f.person, values })
    }

    /// Per-joint probability volumes of the conditioned person.
    pub fn klm_forward(&self, heat: &FeatureVolume<T>, z: &FeatureVolume<T>, z_other: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
        let input = self.klm_input(&heat.values, &z.values, &z_other.values)?;
        self.klm.check_input(&input)?;
        let (logits, _) = self.klm.forward(&input);
        Ok(FeatureVolume { kind: VolumeKind::Probability, person: heat.person, values: spatial_softmax(&logits) })
    }

    fn run(&self, s: &TrainingSample<T>, grid: &VolumeGrid) -> Result<Forward<T>> {
        self.check_features(&s.features)?;
        let (hem_logits, hem_cache) = self.hem.forward(&s.features);
        let heat = hem_logits.map(|z| T::lit(sigmoid(z.to_f64_lossy())));
        let input = self.klm_input(&heat, &s.anchor_own, &s.anchor_others)?;
        let (klm_logits, klm_cache) = self.klm.forward(&input);
        let prob = spatial_softmax(&klm_logits);
        let standard = expectation(&prob, grid).into_iter().map(|(p, _)| p).collect();
        Ok(Forward { hem_logits, hem_cache, heat, klm_cache, prob, standard })
    }

    /// Forward-only loss evaluation.
    pub fn evaluate(&self, s: &TrainingSample<T>, grid: &VolumeGrid, cfg: &LossConfig) -> Result<LossBreakdown> {
        let fw = self.run(s, grid)?;
        let target: VoxelTensor<T> = s.heatmap.dense(grid);
        let (focal, _) = focal_loss_logits(&fw.hem_logits, &target, cfg);
        let predicted: Vec<_> = fw.standard.iter().map(|p| s.unpose.inverse_apply(p)).collect();
        let (l1, _) = l1_loss(&predicted, &s.target, cfg.lambda);
        Ok(LossBreakdown { focal, l1, total: focal + l1, predicted })
    }

    /// Forward and backward pass for one sample; parameter gradients of
    /// `scale * loss` are added to the accumulated gradients.
    pub fn accumulate(&mut self, s: &TrainingSample<T>, grid: &VolumeGrid, cfg: &LossConfig, scale: f64) -> Result<LossBreakdown> {
        let fw = self.run(s, grid)?;
        let joints = self.config.joints;
        let target: VoxelTensor<T> = s.heatmap.dense(grid);
        let (focal, mut d_hem) = focal_loss_logits(&fw.hem_logits, &target, cfg);
        let predicted: Vec<_> = fw.standard.iter().map(|p| s.unpose.inverse_apply(p)).collect();
        let (l1, d_world) = l1_loss(&predicted, &s.target, cfg.lambda);

        // expectation and softmax backward, in the standard frame
        let d_std: Vec<_> = d_world.iter().map(|g| s.unpose.apply_vector(g)).collect();
        let offsets: Vec<f64> = d_std.iter().zip(&fw.standard).map(|(g, y)| g.dot(&y.coords)).collect();
        let mut d_klm = VoxelTensor::zeros(fw.prob.side(), joints);
        {
            let p = fw.prob.data();
            let out = d_klm.data_mut();
            for v in 0..grid.voxels() {
                let x = grid.center_standard(v);
                for j in 0..joints {
                    let idx = v * joints + j;
                    let gx = d_std[j].dot(&x.coords);
                    out[idx] = T::lit(scale * p[idx].to_f64_lossy() * (gx - offsets[j]));
                }
            }
        }
        let d_input = self.klm.backward(&fw.klm_cache, &d_klm, true).expect("input gradient requested");

        // heatmap path: focal gradient plus what flows back through the localization stage
        {
            let c_in = d_input.channels();
            let di = d_input.data();
            let h = fw.heat.data();
            for (v, row) in d_hem.data_mut().chunks_exact_mut(joints).enumerate() {
                for (j, g) in row.iter_mut().enumerate() {
                    let hv = h[v * joints + j].to_f64_lossy();
                    let through = di[v * c_in + j].to_f64_lossy() * hv * (1.0 - hv);
                    *g = T::lit(g.to_f64_lossy() * scale + through);
                }
            }
        }
        self.hem.backward(&fw.hem_cache, &d_hem, false);
        Ok(LossBreakdown { focal, l1, total: focal + l1, predicted })
    }
}
