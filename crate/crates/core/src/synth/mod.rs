//! Synthetic multi-view training data from MoCap skeletons.

mod corpus;
mod render;
mod scene;

pub use corpus::{builtin_corpus, MoCapClip, CORPUS_FPS};
pub use render::{render_heatmaps, render_person, RENDER_SIGMA};
pub use scene::{
    capture_bounds, compose_scene, filter_poses, generate_scene, generate_sequence, make_training_sample, ring_rig, sample_rng, Attraction,
    CaptureBounds, RingRig, SceneSample, DEFAULT_MIN_MOVE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Randomization of scene layout, rendered heatmaps and anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability of zeroing a whole view.
    pub view_dropout: f64,
    /// Probability of dropping one joint of one person in one view.
    pub keypoint_dropout: f64,
    /// Gaussian peaks are scaled by a uniform factor from this range.
    pub peak_scale: (f64, f64),
    /// Uniform offset of each Gaussian center (heatmap pixels).
    pub position_jitter: f64,
    /// Each axis of a Gaussian is stretched by a factor in `[1 - a, 1 + a]`.
    pub anisotropy: f64,
    /// Spurious Gaussians per joint and view.
    pub false_positive_rate: f64,
    pub false_positive_amplitude: (f64, f64),
    /// Std of the isotropic jitter added to anchors (meters).
    pub center_jitter: f64,
    /// Probability that a pair of people is pulled together.
    pub attraction_probability: f64,
    /// Horizontal pelvis distance of an attracted pair (meters).
    pub attraction_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            view_dropout: 0.1,
            keypoint_dropout: 0.05,
            peak_scale: (0.5, 1.0),
            position_jitter: 1.0,
            anisotropy: 0.3,
            false_positive_rate: 0.05,
            false_positive_amplitude: (0.1, 0.5),
            center_jitter: 0.02,
            attraction_probability: 0.5,
            attraction_range: (0.2, 0.8),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Clean heatmaps and exact anchors; scene layout randomization is kept.
    pub fn none() -> Self {
        Self { center_jitter: 0.0, ..Self::default().without_heatmap_augmentation() }
    }

    /// Roughly half the default perturbation strength.
    pub fn mild() -> Self {
        Self {
            view_dropout: 0.05,
            keypoint_dropout: 0.02,
            peak_scale: (0.75, 1.0),
            position_jitter: 0.5,
            anisotropy: 0.15,
            false_positive_rate: 0.02,
            ..Self::default()
        }
    }

    /// Same scene and anchor settings, clean 2D heatmaps.
    pub fn without_heatmap_augmentation(self) -> Self {
        Self {
            view_dropout: 0.0,
            keypoint_dropout: 0.0,
            peak_scale: (1.0, 1.0),
            position_jitter: 0.0,
            anisotropy: 0.0,
            false_positive_rate: 0.0,
            ..self
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("augment.{name} must lie in [0, 1], got {p}")))
            }
        };
        let range = |name: &str, (lo, hi): (f64, f64), min: f64| {
            if lo >= min && hi >= lo && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("augment.{name} must be an ordered range with lower end >= {min}, got ({lo}, {hi})")))
            }
        };
        prob("view_dropout", self.view_dropout)?;
        prob("keypoint_dropout", self.keypoint_dropout)?;
        prob("false_positive_rate", self.false_positive_rate)?;
        prob("attraction_probability", self.attraction_probability)?;
        range("peak_scale", self.peak_scale, f64::MIN_POSITIVE)?;
        range("false_positive_amplitude", self.false_positive_amplitude, 0.0)?;
        range("attraction_range", self.attraction_range, 0.0)?;
        if self.peak_scale.1 > 1.0 || self.false_positive_amplitude.1 > 1.0 {
            return Err(Error::InvalidInput("augment: heatmap amplitudes cannot exceed 1".into()));
        }
        for (name, v) in [("position_jitter", self.position_jitter), ("center_jitter", self.center_jitter)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("augment.{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.anisotropy) {
            return Err(Error::InvalidInput(format!("augment.anisotropy must lie in [0, 1), got {}", self.anisotropy)));
        }
        Ok(())
    }
}
