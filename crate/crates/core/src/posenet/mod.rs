//! Two-stage volumetric pose network: heatmap estimation, anchor-conditioned
//! keypoint localization, expectation readout and training.

pub mod checkpoint;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod net;
pub mod pipeline;
pub mod readout;
pub mod tensor;
pub mod train;

pub use infer::{infer_frame, infer_person, InferenceOptions, PersonEstimate, PersonVolumes};
pub use loss::{GtHeatmap, LossConfig};
pub use net::{NetConfig, PoseNet};
pub use pipeline::{LossBreakdown, TrainingSample};
pub use readout::{soft_argmax, spatial_softmax, temporal_filter};
pub use train::{train, Adam, EpochStats, TrainConfig};
