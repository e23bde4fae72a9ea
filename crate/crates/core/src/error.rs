use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// A numeric argument fell outside its valid domain.
    #[error("domain error in `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },

    /// Incompatible sizes, dimensions or settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Median or least-squares alignment could not be computed.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Input values violate a precondition (e.g. nonpositive depth).
    #[error("invalid input: {0}")]
    Input(String),

    /// Malformed raster or point-cloud file.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
