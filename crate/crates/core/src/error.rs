use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at least one contraction ratio is required")]
    EmptyRatios,
    #[error("contraction ratio {0} outside (0, 1)")]
    RatioOutOfRange(f64),
    #[error("map {index} is not a contraction (spectral norm {norm})")]
    NonContractiveMap { index: usize, norm: f64 },
    #[error("unsupported fractal kind: {0}")]
    UnsupportedKind(String),

    #[error("log-log fit needs at least 3 points with distinct abscissae")]
    DegenerateAbscissa,
    #[error("no occupied pixels")]
    EmptySet,
    #[error("image side {side} is smaller than the largest box 2^{max_exp}")]
    ImageTooSmall { side: usize, max_exp: u32 },
    #[error("image is constant")]
    ConstantImage,
    #[error("image is not square with a power-of-two side ({width}x{height})")]
    NonSquare { width: usize, height: usize },
    #[error("only {found} islands with area >= {min_area} px (need {needed})")]
    InsufficientIslands {
        found: usize,
        needed: usize,
        min_area: usize,
    },
    #[error("cannot place {needed} sandbox centers ({available} eligible)")]
    TooSparse { needed: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weight file version mismatch: {0}")]
    VersionMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("validation loss must be finite and non-negative, got {0}")]
    NegativeLoss(f64),
    #[error("training diverged (loss {0}); lower the learning rate")]
    Diverged(f64),
    #[error("series of length {len} is shorter than window {window}")]
    SeriesTooShort { len: usize, window: usize },

    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("family {0} has no entries")]
    EmptyFamily(String),

    #[error("every sampling slot exhausted its retries")]
    AllSlotsExhausted,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
