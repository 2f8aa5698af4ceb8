use thiserror::Error;

/// Errors raised by the fitting pipeline and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },

    #[error("insufficient points: need more than {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("sphere template needs at least 4 points, got {0}")]
    TooFewPoints(usize),

    #[error("affine transform is numerically singular (condition number {condition:.3e})")]
    SingularTransform { condition: f64 },

    #[error("template moment matrix is numerically singular (condition number {condition:.3e})")]
    SingularMoment { condition: f64 },

    #[error("scatter matrix has an ambiguous smallest eigenvector")]
    RankDeficient,

    #[error("all robust weights vanished")]
    DegenerateWeights,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, FitError>;
