use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalar { shape: Vec<usize> },

    #[error("flow layer {layer} diverged: {source}")]
    LayerDiverged {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("evaluation produced a non-finite value at coordinate {index}")]
    Evaluation { index: usize },

    #[error("{path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("{}: byte {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("configuration error: {0}")]
    Setup(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors that signal a numerical blow-up rather than misuse.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Domain { .. } | Error::LayerDiverged { .. } | Error::Divergence { .. }
        )
    }
}
