use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("NaN gradient in parameter `{0}`")]
    NanGradient(String),

    #[error("non-finite state at sampling step {step}")]
    NonFiniteSample { step: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{height}x{width} is not divisible by patch {patch}; pad by {pad_h} rows and {pad_w} columns")]
    NotDivisible {
        height: usize,
        width: usize,
        patch: usize,
        pad_h: usize,
        pad_w: usize,
    },

    #[error("LoRA requires condition tokens but no condition image was given")]
    LoraWithoutCondition,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ArchitectureMismatch(_) => 2,
            Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 3,
            Error::NanGradient(_)
            | Error::NonFiniteSample { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Numeric(_) => 4,
            _ => 1,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            4 => "numeric",
            _ => "internal",
        }
    }
}
