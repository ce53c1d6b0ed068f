use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("ill-posed recovery: smallest singular value {sigma_min:e} of the cross-gramian is below {threshold:e}")]
    IllPosed { sigma_min: f64, threshold: f64 },

    #[error("linearly dependent functionals, dropped indices {dropped:?}")]
    Rank { dropped: Vec<usize> },

    #[error("model error at parameter {xi:?}: {reason}")]
    Model { xi: Vec<f64>, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("artifact {path}: {reason}")]
    Artifact { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
