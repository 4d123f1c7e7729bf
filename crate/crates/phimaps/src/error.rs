use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{model} grids are not provided for dimension {dim}")]
    UnsupportedDimension { model: &'static str, dim: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("projection onto {target} did not converge in {iterations} iterations")]
    ProjectionDiverged {
        target: &'static str,
        iterations: usize,
    },

    #[error("point is off the target by {residual:e}")]
    OffTarget { residual: f64 },

    #[error("operation needs a grid with a pole and radial distances")]
    NoPole,

    #[error("radius {radius} exceeds usable grid extent {extent}")]
    OutOfRange { radius: f64, extent: f64 },

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("frame is not orthonormal (deviation {0:e})")]
    FrameNotOrthonormal(f64),

    #[error("criterion inapplicable: {0}")]
    Inapplicable(String),

    #[error("theorem hypotheses unmet: {0}")]
    HypothesesUnmet(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("step size underflow after {steps} steps (residual {residual:e})")]
    StepUnderflow { steps: usize, residual: f64 },

    #[error("no descent axis found (most negative axis second variation {min_second:e})")]
    NoDescentAxis { min_second: f64 },

    #[error("not harmonic: residual {residual:e} above threshold {threshold:e}")]
    NotHarmonic { residual: f64, threshold: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
