use std::path::PathBuf;

/// Errors produced anywhere in the alignment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("identity error: patient `{0}` is not in the scorer's label set")]
    Identity(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error at byte {offset}: {kind}")]
    Format { offset: u64, kind: FormatErrorKind },

    #[error("label guard violation: {0}")]
    GuardViolation(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// What went wrong while decoding one of the binary formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    BadVersion { expected: u32, found: u32 },
    Truncated { needed: u64, available: u64 },
    DimensionMismatch { header: u64, expected: u64 },
    CountMismatch { header: u64, expected: u64 },
    TrailingBytes(u64),
    Malformed(String),
}

impl std::fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BadMagic { expected, found } => write!(
                f,
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(found)
            ),
            Self::BadVersion { expected, found } => {
                write!(f, "unsupported version {found} (expected {expected})")
            }
            Self::Truncated { needed, available } => {
                write!(f, "truncated: needed {needed} bytes, {available} available")
            }
            Self::DimensionMismatch { header, expected } => {
                write!(f, "dimension mismatch: header says {header}, expected {expected}")
            }
            Self::CountMismatch { header, expected } => {
                write!(f, "count mismatch: header says {header}, expected {expected}")
            }
            Self::TrailingBytes(n) => write!(f, "{n} unexpected trailing bytes"),
            Self::Malformed(msg) => f.write_str(msg),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(offset: u64, kind: FormatErrorKind) -> Self {
        Error::Format { offset, kind }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
