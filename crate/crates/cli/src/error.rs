use std::fmt;
use std::path::Path;

use fgmhd::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Command failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inconsistent configuration (exit 2).
    Config(String),
    /// Unreadable, unwritable or malformed files (exit 3).
    Io(String),
    /// An estimator or training run could not produce a finite result (exit 4).
    Numerical(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io { .. }
            | Error::MalformedHeader(_)
            | Error::UnsupportedMaxval(_)
            | Error::TruncatedPayload { .. }
            | Error::ShapeMismatch(_)
            | Error::VersionMismatch(_) => CliError::Io(msg),
            Error::InvalidArgument(_)
            | Error::EmptyRatios
            | Error::RatioOutOfRange(_)
            | Error::NonContractiveMap { .. }
            | Error::UnsupportedKind(_)
            | Error::EmptyDataset
            | Error::EmptyReferenceSet
            | Error::EmptyFamily(_) => CliError::Config(msg),
            Error::DegenerateAbscissa
            | Error::EmptySet
            | Error::ImageTooSmall { .. }
            | Error::ConstantImage
            | Error::NonSquare { .. }
            | Error::InsufficientIslands { .. }
            | Error::TooSparse { .. }
            | Error::NegativeLoss(_)
            | Error::Diverged(_)
            | Error::SeriesTooShort { .. }
            | Error::AllSlotsExhausted => CliError::Numerical(msg),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
