//! TOML schemas: rig calibration and pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use volmocap::centers::CenterConfig;
use volmocap::posenet::{InferenceOptions, NetConfig, TrainConfig};
use volmocap::synth::{ring_rig, AugmentConfig, RingRig};
use volmocap::volumes::{VolumeGrid, ANCHOR_SIGMA, VOLUME_RESOLUTION, VOLUME_SIDE};
use volmocap::Camera;

use crate::error::{io_err, schema, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: usize,
    /// Row-major.
    pub intrinsics: [[f64; 3]; 3],
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub image_size: [u32; 2],
    pub heatmap_downscale: u32,
}

impl CameraEntry {
    pub fn from_camera(c: &Camera) -> Self {
        let rows = |m: &Matrix3<f64>| std::array::from_fn(|r| std::array::from_fn(|k| m[(r, k)]));
        Self {
            id: c.id,
            intrinsics: rows(&c.intrinsics),
            rotation: rows(&c.rotation),
            translation: [c.translation.x, c.translation.y, c.translation.z],
            image_size: [c.image_size.0, c.image_size.1],
            heatmap_downscale: c.heatmap_downscale,
        }
    }

    fn to_camera(&self) -> volmocap::Result<Camera> {
        let m = |a: &[[f64; 3]; 3]| Matrix3::from_fn(|r, k| a[r][k]);
        Camera::new(
            self.id,
            m(&self.intrinsics),
            m(&self.rotation),
            Vector3::from(self.translation),
            (self.image_size[0], self.image_size[1]),
            self.heatmap_downscale,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingEntry {
    pub views: usize,
    pub radius: f64,
    pub height: f64,
    #[serde(default = "default_target_height")]
    pub target_height: f64,
    pub focal: f64,
    pub image_size: [u32; 2],
    pub heatmap_downscale: u32,
    #[serde(default)]
    pub phase: f64,
}

fn default_target_height() -> f64 {
    1.0
}

/// Either explicit cameras or a generated ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub camera: Vec<CameraEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<RingEntry>,
}

impl RigFile {
    pub fn from_cameras(cams: &[Camera]) -> Self {
        Self { schema_version: SCHEMA_VERSION, camera: cams.iter().map(CameraEntry::from_camera).collect(), ring: None }
    }

    pub fn cameras(&self, file: &Path) -> Result<Vec<Camera>> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(file, format!("schema_version: unsupported version {}", self.schema_version)));
        }
        let cams = match (&self.ring, self.camera.is_empty()) {
            (Some(_), false) => return Err(schema(file, "camera: give either [[camera]] entries or a [ring], not both")),
            (None, true) => return Err(schema(file, "camera: rig has no cameras")),
            (Some(r), true) => {
                let spec = RingRig {
                    views: r.views,
                    radius: r.radius,
                    height: r.height,
                    target_height: r.target_height,
                    focal: r.focal,
                    image_size: (r.image_size[0], r.image_size[1]),
                    heatmap_downscale: r.heatmap_downscale,
                    phase: r.phase,
                };
                if r.views < 2 {
                    return Err(schema(file, "ring.views: at least two views are required"));
                }
                ring_rig(&spec).map_err(|e| schema(file, format!("ring: {e}")))?
            }
            (None, false) => self
                .camera
                .iter()
                .enumerate()
                .map(|(k, c)| c.to_camera().map_err(|e| schema(file, format!("camera[{k}]: {e}"))))
                .collect::<Result<Vec<_>>>()?,
        };
        for (k, c) in cams.iter().enumerate() {
            if c.id != k {
                return Err(schema(file, format!("camera[{k}].id: expected {k}, got {}", c.id)));
            }
            if c.heatmap_size() != cams[0].heatmap_size() {
                return Err(schema(file, format!("camera[{k}].image_size: all views must share one heatmap size")));
            }
        }
        Ok(cams)
    }
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| schema(path, e.to_string().trim_end().to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| schema(path, e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_rig(path: &Path) -> Result<Vec<Camera>> {
    read_toml::<RigFile>(path)?.cameras(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub people: usize,
    /// Pose-pool motion threshold (meters).
    pub min_move: f64,
    /// Directory of clip files; the built-in corpus when absent.
    pub mocap: Option<PathBuf>,
    /// Consecutive frames of continuous motion instead of independent scenes.
    pub sequence: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { count: 100, people: 1, min_move: volmocap::synth::DEFAULT_MIN_MOVE, mocap: None, sequence: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub tracking: bool,
    pub temporal_filter: bool,
    /// Temporal gate radius r (meters).
    pub radius: f64,
    pub gate_px: f64,
    pub tau_score: f64,
    pub neck_distance: (f64, f64),
    pub reacquire_radius: f64,
    pub anchor_sigma: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let c = CenterConfig::default();
        Self {
            tracking: true,
            temporal_filter: false,
            radius: 0.05,
            gate_px: c.gate_px,
            tau_score: c.tau_score,
            neck_distance: c.neck_distance,
            reacquire_radius: c.reacquire_radius,
            anchor_sigma: ANCHOR_SIGMA,
        }
    }
}

impl InferenceSection {
    pub fn centers(&self) -> CenterConfig {
        CenterConfig { gate_px: self.gate_px, tau_score: self.tau_score, neck_distance: self.neck_distance, reacquire_radius: self.reacquire_radius }
    }

    pub fn options(&self) -> InferenceOptions {
        InferenceOptions { temporal_radius: self.temporal_filter.then_some(self.radius), anchor_sigma: self.anchor_sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub widths: [usize; 3],
    pub conditioned: bool,
    pub resolution: usize,
    /// Volume edge length (meters).
    pub side: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let n = NetConfig::default();
        Self { widths: n.widths, conditioned: n.conditioned, resolution: VOLUME_RESOLUTION, side: VOLUME_SIDE }
    }
}

impl ModelSection {
    pub fn net(&self) -> NetConfig {
        NetConfig { joints: volmocap::NUM_JOINTS, widths: self.widths, conditioned: self.conditioned }
    }

    pub fn grid(&self) -> VolumeGrid {
        VolumeGrid::new(self.side, self.resolution)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub rig: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    /// Overrides the seeds of `augment` and `train` when given.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Sequential, single-threaded execution with fixed reduction order.
    #[serde(default = "yes")]
    pub deterministic: bool,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub model: ModelSection,
}

fn yes() -> bool {
    true
}

impl PipelineConfig {
    /// Parse, resolve paths against the file's directory and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        for p in [&mut self.rig, &mut self.dataset, &mut self.checkpoint, &mut self.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(m) = self.synth.mocap.as_mut().filter(|m| m.is_relative()) {
            *m = base.join(&*m);
        }
        if let Some(seed) = self.seed {
            self.augment.seed = seed;
            self.train.seed = seed;
        }
    }

    pub fn validate(&self, file: &Path) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(file, format!("schema_version: unsupported version {}", self.schema_version)));
        }
        if !self.rig.exists() {
            return Err(schema(file, format!("rig: {} does not exist", self.rig.display())));
        }
        if let Some(m) = self.synth.mocap.as_ref().filter(|m| !m.is_dir()) {
            return Err(schema(file, format!("synth.mocap: {} is not a directory", m.display())));
        }
        if !(self.inference.radius > 0.0) {
            return Err(schema(file, "inference.radius: must be positive"));
        }
        if self.synth.people == 0 {
            return Err(schema(file, "synth.people: at least one person per scene"));
        }
        if self.model.resolution == 0 || self.model.resolution % 8 != 0 || !(self.model.side > 0.0) {
            return Err(schema(file, "model.resolution: must be a positive multiple of 8 with a positive side"));
        }
        if self.model.widths.contains(&0) {
            return Err(schema(file, "model.widths: must be positive"));
        }
        self.augment.validate().map_err(|e| schema(file, e.to_string()))?;
        self.train.validate().map_err(|e| schema(file, e.to_string()))?;
        Ok(())
    }
}
