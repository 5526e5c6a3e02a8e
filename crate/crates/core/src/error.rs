use std::path::PathBuf;

/// Errors produced anywhere in the extraction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data (audio, matrices) is unusable, e.g. too short or non-finite.
    #[error("invalid input: {0}")]
    Input(String),

    /// A manifest, cache or checkpoint record could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Stored metadata disagrees with the data it describes.
    #[error("integrity check failed: {0}")]
    Integrity(String),

    /// The victim refused a query because the budget is spent.
    #[error("query budget exhausted")]
    BudgetExhausted,

    /// The victim refused a clip longer than its per-clip limit.
    #[error("clip {clip_id} is {duration_s:.3} s, longer than the {max_seconds} s limit")]
    ClipTooLong {
        clip_id: String,
        duration_s: f64,
        max_seconds: f64,
    },

    /// Network failure talking to the victim; safe to retry later.
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    /// The victim answered with an unexpected status or body.
    #[error("victim rejected request ({status}): {body}")]
    Rejected { status: u16, body: String },

    /// A numeric failure, e.g. NaN during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether retrying the same request later could succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
