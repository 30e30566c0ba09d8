use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("unphysical state: |r| = {norm} exceeds the Bloch ball")]
    UnphysicalState { norm: f64 },

    #[error("diagonal frame undefined for delta = 0")]
    FrameDegenerate,

    #[error("degenerate eigenvalues: gamma_total = 2 delta makes omega vanish")]
    DegenerateEigenvalue,

    #[error("numerical consistency check failed: {0}")]
    NumericalConsistency(String),

    #[error("measurement update underflow: post-measurement trace {trace:e}")]
    Underflow { trace: f64 },

    #[error("state left the Bloch ball by {overshoot:e}; reduce dt")]
    StepSize { overshoot: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("boundary value {value} is outside (-1, 1)")]
    BoundaryDivergence { value: f64 },

    #[error("index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("no trajectory accepted; predicted acceptance fraction {predicted:e}")]
    EmptySelection { predicted: f64 },

    #[error("ensemble of {requested} bytes exceeds the memory budget of {budget} bytes")]
    ResourceLimit { requested: usize, budget: usize },

    #[error("endpoint mismatch: {0}")]
    EndpointMismatch(String),

    #[error("no real portrait curve: 1 + 2 E tau_m = {0} < 0")]
    NoRealCurve(f64),

    #[error("burn-in {burn_in} plus largest lag {max_lag} exceeds run length {run}")]
    BurnInTooLong { burn_in: f64, max_lag: f64, run: f64 },

    #[error("unsupported diagram: {0}")]
    UnsupportedDiagram(String),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
