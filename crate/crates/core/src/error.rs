use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot encode image {path}: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("image has zero size")]
    EmptyImage,

    #[error("side must be odd, got {0}")]
    EvenSide(usize),

    #[error("center ({x},{y}) lies outside the {width}x{height} image")]
    CenterOutside {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stain matrix is rank deficient")]
    RankDeficient,

    #[error("insufficient foreground: {found} tissue pixels, need at least {needed}; use the fixed reference stain matrix")]
    InsufficientForeground { found: usize, needed: usize },

    #[error("degenerate stain estimate: {0}")]
    DegenerateStains(String),

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("row count mismatch: expected {expected}, found {found}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch")]
    ChecksumMismatch,

    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("need >= 2 classes, found {0}")]
    TooFewClasses(usize),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("infeasible point placement: {0}")]
    Infeasible(String),

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
