use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A forward intermediate became NaN or infinite.
    #[error("numeric overflow at time step {step} (layer {layer}): non-finite {what}")]
    NumericOverflow {
        step: usize,
        layer: usize,
        what: &'static str,
    },

    /// Non-finite value in a loss or gradient.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Caller violated an API contract (wrong trace, bad label, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed binary file.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("unsupported model version {found} (supported: {supported:?})")]
    Version { found: u32, supported: &'static [u32] },

    /// An error raised while processing a specific utterance.
    #[error("utterance {id}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    pub(crate) fn in_utterance(self, id: &str) -> Self {
        Error::Utterance {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through utterance wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Utterance { source, .. } => source.root(),
            other => other,
        }
    }
}
