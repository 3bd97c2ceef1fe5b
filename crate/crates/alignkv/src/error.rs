use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite half value 0x{0:04X}")]
    NonFinite(u16),
    #[error("kept mantissa bits {0} outside [0, 10]")]
    KeptBitsOutOfRange(i32),
    #[error("non-prefix tier: low nibble present without middle nibble")]
    NonPrefixTier,
    #[error(
        "degenerate dot product: no channel has both a non-zero query and a non-zero column bound"
    )]
    DegenerateDotProduct,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value rejected at token {token}, channel {channel} ({side})")]
    NonFiniteAppend {
        side: &'static str,
        token: usize,
        channel: usize,
    },
    #[error("index ({token}, {channel}) out of range for {n_tokens}x{n_dims} tensor")]
    OutOfRange {
        token: usize,
        channel: usize,
        n_tokens: usize,
        n_dims: usize,
    },
    #[error("the context is empty")]
    EmptyContext,
    #[error("no elements were read")]
    NoReads,
    #[error("output estimate required unless all tiers are forced")]
    MissingEstimate,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0} (only 1 = half is defined)")]
    UnsupportedDtype(u8),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("snapshot sidecar {0} does not match the stored tensor")]
    SidecarMismatch(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
