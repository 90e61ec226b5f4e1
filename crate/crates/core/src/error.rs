use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not converge on {at}: partial value {partial:e}, error estimate {error:e}")]
    Quadrature { partial: f64, error: f64, at: String },

    #[error("quadrature routines disagree at r = {r:e}: gauss-kronrod {gk:e} vs double-exponential {de:e}")]
    QuadratureMismatch { r: f64, gk: f64, de: f64 },

    #[error("growth condition violated at r = {r:e}: mu(r) > 0 but mu(2r) = 0")]
    GrowthViolation { r: f64 },

    #[error("integral of (1 ∧ t) mu(t) diverges at t -> {endpoint}")]
    Divergent { endpoint: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("generator integral stalled in radius shell [{lo:e}, {hi:e}]")]
    GeneratorShell { lo: f64, hi: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
