use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: {what} has length {got}, expected {expected}")]
    Shape {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("arity mismatch: {0}")]
    Arity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: need more than {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("rank-deficient least-squares system ({0}); use ridge > 0")]
    RankDeficient(String),

    #[error("lolimot cannot split: {0}")]
    CannotSplit(String),

    #[error("certifiability not reached within {iterations} iterations (best penalty {best_penalty:.3e})")]
    CertifiabilityUnreached {
        iterations: usize,
        best_penalty: f64,
    },

    #[error("wrong model kind: {0}")]
    WrongKind(String),

    #[error("validity vector is not on the simplex: {0}")]
    NotOnSimplex(String),

    #[error("relative degree: {0}")]
    RelativeDegree(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("inversion singular at validities {validities:?}: {reason}")]
    Singular {
        reason: String,
        validities: Vec<Vec<f64>>,
    },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("signal diverged at step {step}")]
    Divergence { step: usize },

    #[error("dataset schema: {0}")]
    Schema(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation failures are caused by the caller's inputs; everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Arity(_)
                | Error::Config(_)
                | Error::InsufficientData { .. }
                | Error::WrongKind(_)
                | Error::Schema(_)
                | Error::Unsupported(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape {
            what,
            got,
            expected,
        });
    }
    Ok(())
}
