use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    /// Malformed input text. `line` and `column` are 1-based; 0 means unknown.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("layer `{layer}`: {message}")]
    InvalidLayer { layer: String, message: String },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported layer kind {kind} for {operation}")]
    UnsupportedKind {
        kind: String,
        operation: &'static str,
    },

    #[error("channel-wise lowering is inapplicable to depthwise layers")]
    ChannelwiseInapplicable,

    #[error("dataflow mismatch: {0}")]
    DataflowMismatch(String),

    #[error("{buffer} SRAM tile of {needed} bytes exceeds the {available} bytes available")]
    TileExceedsSram {
        buffer: &'static str,
        needed: u64,
        available: u64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{0}")]
    Invalid(String),

    #[error("estimator failed: {0}")]
    Estimator(String),

    /// An error raised while processing one layer of a network.
    #[error("layer `{layer}`: {source}")]
    InLayer { layer: String, source: Box<Error> },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn layer(layer: &str, message: impl Into<String>) -> Self {
        Error::InvalidLayer {
            layer: layer.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn in_layer(layer: &str, source: Error) -> Self {
        Error::InLayer {
            layer: layer.to_string(),
            source: Box::new(source),
        }
    }

    /// True for errors caused by malformed input files rather than by simulation.
    pub fn is_input_error(&self) -> bool {
        if let Error::InLayer { source, .. } = self {
            return source.is_input_error();
        }
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidLayer { .. }
                | Error::InvalidTopology(_)
                | Error::InvalidConfig(_)
                | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
