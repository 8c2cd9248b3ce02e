use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{what} out of domain: {detail}")]
    Domain { what: &'static str, detail: String },

    /// A state left the triangle by more than the clamping tolerance.
    #[error("state left the admissible triangle at t = {t} (violation {violation:e}); reduce the step size")]
    StepSize { t: f64, violation: f64 },

    #[error("grid needs at least 2 subdivisions per edge, got {0}")]
    GridSize(usize),

    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e}, target {target:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("thresholds are undefined when q = p")]
    UndefinedThreshold,

    #[error("invalid control signal: {0}")]
    Control(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value field does not match: {0}")]
    Mismatch(String),

    #[error("malformed value-field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
