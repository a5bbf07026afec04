use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    CaseSyntax { line: usize, message: String },

    #[error("invalid case: {0}")]
    CaseSemantic(String),

    #[error("metering plan: {0}")]
    Plan(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("singular power flow Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("network is not observable with this measurement set (gain matrix is not positive definite)")]
    Unobservable,

    #[error("power flow failed at sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("covariance of dimension {dim} is not positive definite after ridge {ridge:.3e}; increase the ridge")]
    NotPositiveDefinite { dim: usize, ridge: f64 },

    #[error("{0}")]
    InvalidInput(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
