//! 15-keypoint body skeleton (CMU Panoptic joint order).

use nalgebra::{Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

pub const NUM_JOINTS: usize = 15;

pub const NECK: usize = 0;
pub const NOSE: usize = 1;
pub const PELVIS: usize = 2;
pub const L_SHOULDER: usize = 3;
pub const L_ELBOW: usize = 4;
pub const L_WRIST: usize = 5;
pub const L_HIP: usize = 6;
pub const L_KNEE: usize = 7;
pub const L_ANKLE: usize = 8;
pub const R_SHOULDER: usize = 9;
pub const R_ELBOW: usize = 10;
pub const R_WRIST: usize = 11;
pub const R_HIP: usize = 12;
pub const R_KNEE: usize = 13;
pub const R_ANKLE: usize = 14;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "neck",
    "nose",
    "pelvis",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
];

/// Parent of each joint in the kinematic tree (pelvis is the root).
pub const PARENT: [Option<usize>; NUM_JOINTS] = [
    Some(PELVIS),
    Some(NECK),
    None,
    Some(NECK),
    Some(L_SHOULDER),
    Some(L_ELBOW),
    Some(PELVIS),
    Some(L_HIP),
    Some(L_KNEE),
    Some(NECK),
    Some(R_SHOULDER),
    Some(R_ELBOW),
    Some(PELVIS),
    Some(R_HIP),
    Some(R_KNEE),
];

/// Coarse joint groups used by per-joint reports (left and right merged).
pub fn joint_group(joint: usize) -> &'static str {
    match joint {
        NECK => "neck",
        NOSE => "head",
        PELVIS => "pelvis",
        L_SHOULDER | R_SHOULDER => "shoulder",
        L_ELBOW | R_ELBOW => "elbow",
        L_WRIST | R_WRIST => "wrist",
        L_HIP | R_HIP => "hip",
        L_KNEE | R_KNEE => "knee",
        L_ANKLE | R_ANKLE => "ankle",
        _ => "unknown",
    }
}

/// One person's joints in world coordinates (meters) with per-joint confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub id: u32,
    pub joints: [Point3<f64>; NUM_JOINTS],
    pub confidence: [f64; NUM_JOINTS],
}

impl Skeleton3D {
    pub fn new(id: u32, joints: [Point3<f64>; NUM_JOINTS]) -> Self {
        Self { id, joints, confidence: [1.0; NUM_JOINTS] }
    }

    pub fn pelvis(&self) -> Point3<f64> {
        self.joints[PELVIS]
    }

    pub fn neck(&self) -> Point3<f64> {
        self.joints[NECK]
    }

    /// Mean per-joint confidence, used to rank estimates.
    pub fn score(&self) -> f64 {
        self.confidence.iter().sum::<f64>() / NUM_JOINTS as f64
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.coords.iter().all(|v| v.is_finite()))
    }

    pub fn bone_lengths(&self) -> Vec<f64> {
        PARENT
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (self.joints[j] - self.joints[p]).norm()))
            .collect()
    }

    pub fn lowest_z(&self) -> f64 {
        self.joints.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)
    }

    pub fn translated(&self, shift: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.joints.iter_mut().for_each(|p| *p += shift);
        out
    }

    /// Rigid motion `x -> rot * x + shift`.
    pub fn transformed(&self, rot: &Rotation3<f64>, shift: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.joints.iter_mut().for_each(|p| *p = rot * *p + shift);
        out
    }

    /// Largest joint displacement between two poses.
    pub fn max_displacement(&self, other: &Self) -> f64 {
        self.joints.iter().zip(&other.joints).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}
