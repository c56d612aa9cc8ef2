use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("atlas maps are rank deficient: rows {rows:?} depend on earlier rows")]
    RankDeficient { rows: Vec<usize> },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("inter-site cross-validation requires at least 10 acquisition sites (found {found})")]
    TooFewSites { found: usize },

    #[error("{0} is not implemented")]
    Unimplemented(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("only one class present: {0}")]
    SingleClass(String),

    #[error("training/test leakage: {0}")]
    Leakage(String),

    #[error("aliased factor levels: {0}")]
    Aliased(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
