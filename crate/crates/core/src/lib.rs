//! Multi-view volumetric 3D pose reconstruction for closely interacting people.
//!
//! Per frame: person anchors (pelvis, neck) are triangulated from 2D heatmaps,
//! a person-centred keypoint volume is sampled from every view, and a two-stage
//! 3D network denoises it and localizes the joints of the anchored person.

pub mod centers;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod posenet;
pub mod scalar;
pub mod skeleton;
pub mod synth;
pub mod volumes;

pub use error::{Error, Result};
pub use skeleton::{Skeleton3D, NUM_JOINTS};

/// Double-precision camera, the type used throughout the pipeline.
pub type Camera = geometry::CameraParams<f64>;
