use std::path::PathBuf;

use crate::network::InputStream;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no output layer")]
    NoOutputLayer,

    #[error("layer {layer}: {detail}")]
    Layer { layer: usize, detail: String },

    #[error("kernel {kernel}x{kernel} larger than input {height}x{width}")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },

    #[error("missing input stream `{0}`")]
    MissingInput(InputStream),

    #[error("stale activations: {0}")]
    StaleActivations(String),

    #[error("action index {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },

    #[error("episode already terminated; reset before stepping")]
    EpisodeTerminated,

    #[error("replay memory holds {available} transitions, {requested} requested")]
    InsufficientContents { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn layer(layer: usize, detail: impl Into<String>) -> Self {
        Error::Layer {
            layer,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
