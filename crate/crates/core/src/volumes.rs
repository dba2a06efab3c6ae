//! Person-centred voxel volumes: keypoint feature volumes sampled from the
//! multi-view heatmaps and Gaussian anchor fields around pelvis and neck.

use nalgebra::{Point3, Rotation3, Vector3};

use crate::centers::PersonAnchors;
use crate::error::{Error, Result};
use crate::geometry::{project, BilinearTap, CameraParams, HeatmapStack};
use crate::posenet::tensor::VoxelTensor;
use crate::scalar::Scalar;

/// Default edge length of a person volume (meters).
pub const VOLUME_SIDE: f64 = 2.0;
/// Default voxels per axis.
pub const VOLUME_RESOLUTION: usize = 32;
/// Default Gaussian radius of the anchor fields (meters).
pub const ANCHOR_SIGMA: f64 = 0.05;

/// Rigid map from world coordinates into a person's standard frame:
/// `x_std = rotation * x_world + translation`.
///
/// The pelvis lands on the origin and the pelvis-to-neck direction on `+z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnposeTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl UnposeTransform {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, world: &Point3<f64>) -> Point3<f64> {
        self.rotation * world + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse_apply(&self, standard: &Point3<f64>) -> Point3<f64> {
        self.rotation.inverse() * (standard - self.translation)
    }

    pub fn inverse_apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * v
    }
}

/// Shortest-arc unposing for one person's anchors.
pub fn compute_unpose(anchors: &PersonAnchors) -> Result<UnposeTransform> {
    unpose_from_points(&anchors.pelvis, &anchors.neck)
}

pub fn unpose_from_points(pelvis: &Point3<f64>, neck: &Point3<f64>) -> Result<UnposeTransform> {
    let axis = neck - pelvis;
    let separation = axis.norm();
    if separation < 1e-6 || !separation.is_finite() {
        return Err(Error::DegenerateAnchors { separation });
    }
    let rotation = shortest_arc(&(axis / separation), &Vector3::z());
    let translation = -(rotation * pelvis.coords);
    Ok(UnposeTransform { rotation, translation })
}

fn shortest_arc(from: &Vector3<f64>, to: &Vector3<f64>) -> Rotation3<f64> {
    match Rotation3::rotation_between(from, to) {
        Some(r) => r,
        // antiparallel: any half turn about an axis orthogonal to `to`
        None => {
            let ortho = if to.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let axis = nalgebra::Unit::new_normalize(to.cross(&ortho));
            Rotation3::from_axis_angle(&axis, std::f64::consts::PI)
        }
    }
}

/// Regular cubic grid centred on the standard-frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGrid {
    pub side: f64,
    pub resolution: usize,
}

impl Default for VolumeGrid {
    fn default() -> Self {
        Self { side: VOLUME_SIDE, resolution: VOLUME_RESOLUTION }
    }
}

impl VolumeGrid {
    pub fn new(side: f64, resolution: usize) -> Self {
        assert!(side > 0.0 && resolution > 0, "grid must be non-empty");
        Self { side, resolution }
    }

    pub fn pitch(&self) -> f64 {
        self.side / self.resolution as f64
    }

    pub fn voxels(&self) -> usize {
        self.resolution.pow(3)
    }

    /// Coordinate of voxel centre `i` along one axis (cell midpoints).
    pub fn axis_coord(&self, i: usize) -> f64 {
        -0.5 * self.side + (i as f64 + 0.5) * self.pitch()
    }

    pub fn voxel_coords(&self, voxel: usize) -> (usize, usize, usize) {
        let n = self.resolution;
        (voxel / (n * n), (voxel / n) % n, voxel % n)
    }

    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.resolution + iy) * self.resolution + iz
    }

    /// Voxel centre in the standard frame.
    pub fn center_standard(&self, voxel: usize) -> Point3<f64> {
        let (x, y, z) = self.voxel_coords(voxel);
        Point3::new(self.axis_coord(x), self.axis_coord(y), self.axis_coord(z))
    }

    /// Voxel centre in world coordinates.
    pub fn center_world(&self, voxel: usize, unpose: &UnposeTransform) -> Point3<f64> {
        unpose.inverse_apply(&self.center_standard(voxel))
    }

    /// Voxel containing a standard-frame point, if inside the volume.
    pub fn locate(&self, p: &Point3<f64>) -> Option<usize> {
        let n = self.resolution as f64;
        let mut idx = [0usize; 3];
        for (slot, v) in idx.iter_mut().zip(p.coords.iter()) {
            let f = (v + 0.5 * self.side) / self.pitch();
            if !(f >= 0.0 && f < n) {
                return None;
            }
            *slot = f.floor() as usize;
        }
        Some(self.voxel_index(idx[0], idx[1], idx[2]))
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.locate(p).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    KeypointFeature,
    AnchorPositive,
    AnchorNegative,
    Heatmap3D,
    Probability,
}

impl VolumeKind {
    pub fn code(self) -> u32 {
        match self {
            VolumeKind::KeypointFeature => 0,
            VolumeKind::AnchorPositive => 1,
            VolumeKind::AnchorNegative => 2,
            VolumeKind::Heatmap3D => 3,
            VolumeKind::Probability => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => VolumeKind::KeypointFeature,
            1 => VolumeKind::AnchorPositive,
            2 => VolumeKind::AnchorNegative,
            3 => VolumeKind::Heatmap3D,
            4 => VolumeKind::Probability,
            _ => return None,
        })
    }
}

/// Per-person volume with one channel per joint (or per anchor).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume<T> {
    pub kind: VolumeKind,
    pub person: u32,
    pub values: VoxelTensor<T>,
}

impl<T: Scalar> FeatureVolume<T> {
    pub fn channels(&self) -> usize {
        self.values.channels()
    }

    pub fn resolution(&self) -> usize {
        self.values.side()
    }

    pub fn get(&self, channel: usize, voxel: usize) -> T {
        self.values.get(voxel, channel)
    }

    /// Voxel with the largest value in `channel` (first one on ties).
    pub fn argmax(&self, channel: usize) -> usize {
        let mut best = (0, T::neg_infinity());
        for v in 0..self.values.voxels() {
            let x = self.values.get(v, channel);
            if x > best.1 {
                best = (v, x);
            }
        }
        best.0
    }

    pub fn channel_sum(&self, channel: usize) -> f64 {
        (0..self.values.voxels()).map(|v| self.values.get(v, channel).to_f64_lossy()).sum()
    }
}

/// Average over views of the bilinearly sampled heatmap response at each voxel's projection.
///
/// Views where a voxel projects at or behind the camera contribute zero but still count
/// towards the average; views are accumulated in rig order.
pub fn build_keypoint_volume<T: Scalar>(
    grid: &VolumeGrid,
    unpose: &UnposeTransform,
    heatmaps: &HeatmapStack,
    cams: &[CameraParams<f64>],
    person: u32,
) -> Result<FeatureVolume<T>> {
    if cams.is_empty() {
        return Err(Error::InvalidInput("keypoint volume needs at least one view".into()));
    }
    if cams.len() != heatmaps.num_views() {
        return Err(Error::ShapeMismatch { expected: format!("{} heatmap views", cams.len()), actual: format!("{}", heatmaps.num_views()) });
    }
    let joints = heatmaps.joints();
    let (w, h) = (heatmaps.width(), heatmaps.height());
    let plane = w * h;
    let inv_views = 1.0 / cams.len() as f32;
    let mut values = VoxelTensor::zeros(grid.resolution, joints);
    let mut acc = vec![0.0f32; joints];
    for voxel in 0..grid.voxels() {
        let x = grid.center_world(voxel, unpose);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (v, cam) in cams.iter().enumerate() {
            let Ok(px) = project(&x, cam) else { continue };
            let hp = cam.to_heatmap(&px);
            let Some(tap) = BilinearTap::new(hp.x, hp.y, w, h) else { continue };
            let maps = heatmaps.view(v);
            for (j, a) in acc.iter_mut().enumerate() {
                *a += tap.sample(&maps[j * plane..(j + 1) * plane]);
            }
        }
        for (j, a) in acc.iter().enumerate() {
            values.set(voxel, j, T::lit((a * inv_views) as f64));
        }
    }
    Ok(FeatureVolume { kind: VolumeKind::KeypointFeature, person, values })
}

/// Isotropic Gaussian response of a point to an anchor.
pub fn anchor_response(x: &Point3<f64>, anchor: &Point3<f64>, sigma: f64) -> f64 {
    (-(x - anchor).norm_squared() / (2.0 * sigma * sigma)).exp()
}

/// Positive field around the person's own pelvis/neck and the max-fused negative
/// field around everyone else's (all zero when alone).
pub fn build_anchor_volumes<T: Scalar>(
    grid: &VolumeGrid,
    unpose: &UnposeTransform,
    own: &PersonAnchors,
    others: &[PersonAnchors],
    sigma: f64,
) -> Result<(FeatureVolume<T>, FeatureVolume<T>)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("anchor sigma must be positive, got {sigma}")));
    }
    let mut z = VoxelTensor::zeros(grid.resolution, 2);
    let mut z_other = VoxelTensor::zeros(grid.resolution, 2);
    for voxel in 0..grid.voxels() {
        let x = grid.center_world(voxel, unpose);
        z.set(voxel, 0, T::lit(anchor_response(&x, &own.pelvis, sigma)));
        z.set(voxel, 1, T::lit(anchor_response(&x, &own.neck, sigma)));
        let mut fused = [0.0f64; 2];
        for o in others {
            fused[0] = fused[0].max(anchor_response(&x, &o.pelvis, sigma));
            fused[1] = fused[1].max(anchor_response(&x, &o.neck, sigma));
        }
        z_other.set(voxel, 0, T::lit(fused[0]));
        z_other.set(voxel, 1, T::lit(fused[1]));
    }
    Ok((
        FeatureVolume { kind: VolumeKind::AnchorPositive, person: own.id, values: z },
        FeatureVolume { kind: VolumeKind::AnchorNegative, person: own.id, values: z_other },
    ))
}
