use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("moment of total degree {degree} exceeds the supported maximum {max}")]
    UnsupportedMoment { degree: u32, max: u32 },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid switching mode {value}: expected an integer in 1..={modes}")]
    InvalidMode { value: f64, modes: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model has no input channel (m = 0)")]
    NoInputChannel,

    #[error("operation `{op}` does not support the {form} form")]
    UnsupportedForm { op: &'static str, form: &'static str },

    #[error("non-finite coefficient encountered in sample {index}")]
    NonFiniteSample { index: usize },

    #[error("second-moment matrix is not PSD: eigenvalue {min_eig:e} below tolerance -{tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("spectral radius iteration did not converge: estimate {estimate}, bounds [{lower}, {upper}]")]
    ConvergenceFailure {
        estimate: f64,
        lower: f64,
        upper: f64,
    },

    #[error("no Lyapunov certificate at lambda = {lambda}: {reason}")]
    InfeasibleLambda { lambda: f64, reason: String },

    #[error("synthesis requires a model with an input matrix")]
    AnalysisOnlyModel,

    #[error("feasibility backend failed: {0}")]
    BackendFailure(String),

    #[error("system is not stabilizable by static state feedback at lambda < 1")]
    NotStabilizable { diagnostic_lambda: Option<f64> },

    #[error("closed-loop verification failed: achieved lambda {achieved}, closed-loop lambda_min {closed_loop}")]
    VerificationMismatch { achieved: f64, closed_loop: f64 },

    #[error("degenerate decay-rate window: rms[{k1}] = {rms1}, rms[{k2}] = {rms2}")]
    DegenerateWindow {
        k1: usize,
        k2: usize,
        rms1: f64,
        rms2: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
