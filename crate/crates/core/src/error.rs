use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes across the pipeline.
///
/// Variants are grouped by [`ErrorClass`] so that front ends can map them onto
/// exit codes without matching every case.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("no valid data: {0}")]
    EmptyData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("point ({lon}, {lat}) lies outside the grid extent")]
    OutOfExtent { lon: f64, lat: f64 },

    #[error("target cell size {target} is smaller than source cell size {source_cell}")]
    UnsupportedUpsample { target: f64, source_cell: f64 },

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u64),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("unknown station {0}")]
    UnknownStation(String),

    #[error("variogram fit failed: {0}")]
    Fit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("station {station} leaked into training of fold {fold}")]
    Leakage { station: String, fold: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
    Usage,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Divergence { .. } | Error::Fit(_) | Error::Numerical(_) => ErrorClass::Numerical,
            Error::InvalidInput(_) | Error::UnsupportedUpsample { .. } => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::EmptyData(_) => "empty-data",
            Error::Domain(_) => "domain",
            Error::Dimension { .. } => "dimension",
            Error::OutOfExtent { .. } => "out-of-extent",
            Error::UnsupportedUpsample { .. } => "unsupported-upsample",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::Divergence { .. } => "divergence",
            Error::UnknownStation(_) => "unknown-station",
            Error::Fit(_) => "fit",
            Error::Numerical(_) => "numerical",
            Error::InvalidInput(_) => "invalid-input",
            Error::Leakage { .. } => "leakage",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
