use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, frame size is {frame_size}")]
    SignalTooShort { len: usize, frame_size: usize },

    #[error("window/hop pair does not satisfy constant overlap-add (deviation {deviation:.3e})")]
    NotCola { deviation: f64 },

    #[error("invalid transform parameters: {0}")]
    InvalidTransform(String),

    #[error("empty spectrogram")]
    EmptySpectrogram,

    #[error("degenerate array geometry")]
    DegenerateGeometry,

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate reference: source {0} is silent")]
    DegenerateReference(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
