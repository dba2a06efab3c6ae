use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point lies at or behind the camera center (depth {depth:e} m)")]
    DegenerateDepth { depth: f64 },

    #[error("triangulation system is rank deficient (near-parallel rays)")]
    RankDeficient,

    #[error("triangulation needs observations from at least two distinct views, got {0}")]
    TooFewViews(usize),

    #[error("pelvis and neck anchors coincide (separation {separation:e} m)")]
    DegenerateAnchors { separation: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("training loss became non-finite at epoch {epoch} (last finite epoch: {last_finite_epoch:?})")]
    DivergedLoss { epoch: usize, last_finite_epoch: Option<usize> },

    #[error("no pose survived motion filtering")]
    EmptyPool,

    #[error("no matched pose pairs")]
    NoMatches,

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
