use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("bad magic at offset 0: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file at offset {offset}: expected {expected} more bytes")]
    Truncated { offset: usize, expected: usize },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("CIFAR-10 file of {size} bytes is not a multiple of {record} byte records")]
    RecordSize { size: usize, record: usize },
    #[error("image is not square: {height}x{width}")]
    NotSquare { height: usize, width: usize },
    #[error("rotation must be a multiple of 90 degrees, got {0}")]
    BadRotation(i64),
    #[error("k not divisible by number of rotations ({k} clients, {rotations} rotations)")]
    NotDivisible { k: usize, rotations: usize },
    #[error("insufficient samples: need {needed} per rotation partition, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("need at least {min} clients, got {k}")]
    TooFewClients { min: usize, k: usize },
    #[error("peer sampler returned invalid peer {peer} for client {client}")]
    InvalidPeer { client: usize, peer: usize },
    #[error("client {0} has no peer with the same rotation")]
    NoSameRotationPeer(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
