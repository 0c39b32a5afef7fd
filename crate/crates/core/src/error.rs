use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum OseenError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("singular pencil: {0}")]
    SingularPencil(String),

    /// Iteration stopped before every requested pair met the tolerance.
    #[error("eigensolver did not converge after {restarts} restarts (best residuals: {best_residuals:?})")]
    Convergence {
        restarts: usize,
        best_residuals: Vec<f64>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl OseenError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        OseenError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        OseenError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, OseenError>;
