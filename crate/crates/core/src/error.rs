use thiserror::Error;

/// Errors raised across the synthesis and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not Schur stable (spectral radius {spectral_radius})")]
    NotSchurStable { spectral_radius: f64 },

    #[error("I - monodromy is singular; the cycle has no unique limit cycle")]
    NoUniqueLimitCycle,

    #[error("decay rate mu = {mu} too large: scaled monodromy has spectral radius {scaled_radius}")]
    MuTooLarge { mu: f64, scaled_radius: f64 },

    #[error("no admissible decay rate: monodromy spectral radius {spectral_radius} >= 1")]
    MuInfeasible { spectral_radius: f64 },

    #[error("LMI infeasible: best margin {best_margin:.3e} after {iterations} iterations")]
    Infeasible { best_margin: f64, iterations: usize },

    #[error("P_{index} - R is not positive definite (min eigenvalue {min_eig:.3e})")]
    InvalidCertificatePair { index: usize, min_eig: f64 },

    #[error("certificate invalid: {0}")]
    CertificateInvalid(String),

    #[error("closed loop diverged at step {step}")]
    Diverged { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for configuration and input errors, 3 for
    /// infeasible or invalid certificates, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Diverged { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
