use alloc::string::String;
use alloc::vec::Vec;

/// Failures raised anywhere in the pipeline.
///
/// Variants are grouped by the exit status the CLI maps them to; see
/// [`Error::category`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate splitting at base point {point:?}: {reason}")]
    DegenerateSplitting { point: Vec<f64>, reason: String },
    #[error("normal Hessian is not positive definite at base point {point:?} (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { point: Vec<f64>, min_eigenvalue: f64 },
    #[error("non-invertible matrix: {0}")]
    Singular(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("base point mismatch: {left:?} vs {right:?}")]
    BaseMismatch { left: Vec<f64>, right: Vec<f64> },
    #[error("chart domain violated: |z| = {norm} exceeds chart radius {radius}")]
    ChartDomain { norm: f64, radius: f64 },
    #[error("symplecticity residual {residual:e} exceeds tolerance {tolerance:e} at radius {radius}")]
    Symplecticity { residual: f64, tolerance: f64, radius: f64 },
    #[error("q = {q} is an even integer; the loop-space operator resonates with the quadratic tail")]
    EvenQ { q: f64 },
    #[error("level set escapes the chart: {0}")]
    LevelEscape(String),
    #[error("construction inequality violated: {0}")]
    Inequality(String),
    #[error("linking-sign violation: {0}")]
    Linking(String),
    #[error("gradient-flow step underflow (dt = {dt:e}) at front point {index}")]
    StepUnderflow { dt: f64, index: usize },
    #[error("Newton polish failed: {0}")]
    Newton(String),
    #[error("candidate outside capture radius: relative Newton step {relative_step:e} > {threshold:e}")]
    Capture { relative_step: f64, threshold: f64 },
    #[error("extended-hypersurface escape: {0}")]
    Escape(String),
    #[error("energy band violated: rho = {rho} outside [-{epsilon}, {epsilon}]")]
    RhoBand { rho: f64, epsilon: f64 },
    #[error("orbit integration failed: {0}")]
    Integrator(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    ChartEscape,
    Unconverged,
    Verification,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::EvenQ { .. }
            | Error::Dimension(_)
            | Error::DegenerateSplitting { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Singular(_)
            | Error::BaseMismatch { .. }
            | Error::Inequality(_)
            | Error::Linking(_) => ErrorCategory::Config,
            Error::ChartDomain { .. }
            | Error::Symplecticity { .. }
            | Error::LevelEscape(_)
            | Error::Escape(_) => ErrorCategory::ChartEscape,
            Error::StepUnderflow { .. } | Error::Newton(_) | Error::Capture { .. } => {
                ErrorCategory::Unconverged
            }
            Error::RhoBand { .. } | Error::Integrator(_) | Error::Verification(_) => {
                ErrorCategory::Verification
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
