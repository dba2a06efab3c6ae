//! Per-frame inference for every person with known anchors.

use crate::centers::PersonAnchors;
use crate::error::Result;
use crate::geometry::{CameraParams, HeatmapStack};
use crate::scalar::Scalar;
use crate::skeleton::Skeleton3D;
use crate::volumes::{build_anchor_volumes, build_keypoint_volume, compute_unpose, FeatureVolume, VolumeGrid, ANCHOR_SIGMA};

use super::net::PoseNet;
use super::readout::{soft_argmax, temporal_filter};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    /// Gate the 3D heatmaps around the previous frame's joints.
    pub temporal_radius: Option<f64>,
    pub anchor_sigma: f64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self { temporal_radius: None, anchor_sigma: ANCHOR_SIGMA }
    }
}

/// Intermediate volumes of one person, for inspection.
#[derive(Debug, Clone)]
pub struct PersonVolumes<T> {
    pub features: FeatureVolume<T>,
    pub anchor_own: FeatureVolume<T>,
    pub anchor_others: FeatureVolume<T>,
    pub heat: FeatureVolume<T>,
    pub prob: FeatureVolume<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonEstimate {
    pub id: u32,
    pub outcome: Result<Skeleton3D>,
}

/// Full pipeline for `anchors[index]`: unpose, feature and anchor volumes,
/// heatmap estimation, optional temporal gating, localization and readout.
#[allow(clippy::too_many_arguments)]
pub fn infer_person<T: Scalar>(
    net: &PoseNet<T>,
    grid: &VolumeGrid,
    heatmaps: &HeatmapStack,
    cams: &[CameraParams<f64>],
    anchors: &[PersonAnchors],
    index: usize,
    previous: Option<&Skeleton3D>,
    opts: &InferenceOptions,
) -> Result<(Skeleton3D, PersonVolumes<T>)> {
    let own = &anchors[index];
    let unpose = compute_unpose(own)?;
    let others: Vec<PersonAnchors> = anchors.iter().enumerate().filter(|(k, _)| *k != index).map(|(_, a)| a.clone()).collect();
    let features = build_keypoint_volume::<T>(grid, &unpose, heatmaps, cams, own.id)?;
    let (anchor_own, anchor_others) = build_anchor_volumes::<T>(grid, &unpose, own, &others, opts.anchor_sigma)?;
    let mut heat = net.hem_forward(&features)?;
    if let (Some(r), Some(prev)) = (opts.temporal_radius, previous) {
        heat = temporal_filter(&heat, grid, &unpose, prev, r);
    }
    let prob = net.klm_forward(&heat, &anchor_own, &anchor_others)?;
    let skeleton = soft_argmax(&prob, grid, &unpose);
    Ok((skeleton, PersonVolumes { features, anchor_own, anchor_others, heat, prob }))
}

/// Skeletons for every anchored person. Failures (e.g. coincident anchors) are
/// reported per person. `previous` skeletons are matched by id.
pub fn infer_frame<T: Scalar>(
    net: &PoseNet<T>,
    grid: &VolumeGrid,
    heatmaps: &HeatmapStack,
    cams: &[CameraParams<f64>],
    anchors: &[PersonAnchors],
    previous: &[Skeleton3D],
    opts: &InferenceOptions,
) -> Vec<PersonEstimate> {
    (0..anchors.len())
        .map(|i| {
            let prev = previous.iter().find(|s| s.id == anchors[i].id);
            let outcome = infer_person(net, grid, heatmaps, cams, anchors, i, prev, opts).map(|(s, _)| s);
            PersonEstimate { id: anchors[i].id, outcome }
        })
        .collect()
}
