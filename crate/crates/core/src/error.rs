use std::path::PathBuf;

/// Errors produced anywhere in the separation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("malformed or truncated WAV data: {0}")]
    MalformedWav(String),

    #[error("malformed tensor file: {0}")]
    MalformedTensor(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("signal of {samples} samples is shorter than one frame of {frame_size}")]
    SignalTooShort { samples: usize, frame_size: usize },

    #[error("position {index} ({what}) lies outside the room")]
    OutsideRoom { what: &'static str, index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular matrix at frequency bin {bin}, frame {frame}")]
    Singular { bin: usize, frame: usize },

    #[error("frequency bin {bin}: {message}")]
    Bin { bin: usize, message: String },

    #[error("clustering failed: only {usable} usable frames for {sources} sources")]
    TooFewFrames { usable: usize, sources: usize },

    #[error("reference signal {0} is all zeros")]
    ZeroReference(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
