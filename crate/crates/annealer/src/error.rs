use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("target log-density is not finite-or-neg-inf ({value}) at sample {index}: {point:?}")]
    BadTargetValue {
        index: usize,
        value: f64,
        point: Vec<f64>,
    },

    #[error("model log-density is not finite ({value}) at sample {index}: {point:?}")]
    BadModelValue {
        index: usize,
        value: f64,
        point: Vec<f64>,
    },

    #[error("degenerate buffer: target vanishes on all samples")]
    DegenerateBuffer,

    #[error("non-finite objective value {value} at scalar probe {probe}")]
    NonFiniteProbe { probe: f64, value: f64 },

    #[error("path invariant violated: {0}")]
    InvariantViolation(String),

    #[error("quadrature did not converge, refinement trace: {trace:?}")]
    QuadratureNonConvergence { trace: Vec<f64> },

    #[error("config error: {0}")]
    Config(String),

    #[error("telemetry error: {0}")]
    Telemetry(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
