use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("bad magic: expected \"PSEL\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: need {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(u64),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Empty(_) => "empty_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::BadMagic(_) => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes(_) => "trailing_bytes",
            Error::Corrupt(_) => "corrupt",
            Error::DuplicateId(_) => "duplicate_id",
            Error::UnknownId(_) => "unknown_id",
            Error::Format(_) => "format",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Process exit code: 1 usage, 2 input format, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
