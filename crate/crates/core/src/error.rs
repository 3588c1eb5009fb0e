use thiserror::Error;

/// Errors produced by the registration core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("point set {view} is empty")]
    EmptyPointSet { view: usize },

    #[error("point set {view} has {found} points, at least {required} required")]
    TooFewPoints {
        view: usize,
        found: usize,
        required: usize,
    },

    #[error("registration needs at least 2 views, got {0}")]
    TooFewViews(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("degenerate weighted alignment for view {view}: {reason}")]
    DegenerateView { view: usize, reason: &'static str },

    #[error("matrix is not a proper rotation (deviation {deviation:e})")]
    NotARotation { deviation: f64 },

    #[error("covariance update has a zero denominator")]
    ZeroDenominator,
}

pub type Result<T> = core::result::Result<T, Error>;
