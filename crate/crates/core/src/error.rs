use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed audio: {0}")]
    Format(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cannot compute style statistics: {0}")]
    Stats(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error(
        "infeasible alignment: target of length {target_len} needs at least {required} frames, got {frames}"
    )]
    InfeasibleAlignment {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("sequence of length {len} exceeds the maximum of {max}")]
    Length { len: usize, max: usize },

    #[error("token id {id} is outside the vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("bad input: {0}")]
    Input(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => match io.kind() {
                // hound reports short reads as `Other`.
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other => Error::Format(io.to_string()),
                _ => Error::Io(io),
            },
            hound::Error::Unsupported => Error::UnsupportedFormat("unsupported wav encoding".into()),
            other => Error::Format(other.to_string()),
        }
    }
}
