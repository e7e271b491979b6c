use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are split into input problems (bad files, bad parameters,
/// invalid designs) and numerical failures; [`Error::is_numerical`] tells
/// the two apart for callers that map them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing cell: group {group:?}, subject {subject:?}, variable {variable}, time index {time_index}")]
    MissingCell {
        group: String,
        subject: String,
        variable: usize,
        time_index: usize,
    },

    #[error("duplicate cell: group {group:?}, subject {subject:?}, variable {variable}, time index {time_index}")]
    DuplicateCell {
        group: String,
        subject: String,
        variable: usize,
        time_index: usize,
    },

    #[error("non-finite value {value} ({context})")]
    NonFinite { value: f64, context: String },

    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),

    #[error("group {group:?} has {size} subject(s); at least 2 are required")]
    GroupTooSmall { group: String, size: usize },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("scale factors must be finite and strictly positive; got {value} at variable {variable}, time index {time_index}")]
    NonPositiveScale {
        value: f64,
        variable: usize,
        time_index: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("grid too short: integral statistic needs at least 2 points, got {0}")]
    GridTooShort(usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("bad design: {0}")]
    BadDimensions(String),

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("symmetric eigendecomposition failed: {0}")]
    EigenFailure(String),

    #[error("internal consistency failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures of the numerical kernel rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::EigenFailure(_) | Error::Numerical(_))
    }

    /// Variant name, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Parse { .. } => "Parse",
            Error::MissingCell { .. } => "MissingCell",
            Error::DuplicateCell { .. } => "DuplicateCell",
            Error::NonFinite { .. } => "NonFinite",
            Error::InconsistentDimensions(_) => "InconsistentDimensions",
            Error::GroupTooSmall { .. } => "GroupTooSmall",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::NonPositiveScale { .. } => "NonPositiveScale",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::GridTooShort(_) => "GridTooShort",
            Error::EmptyInput(_) => "EmptyInput",
            Error::BadDimensions(_) => "BadDimensions",
            Error::BadConfig(_) => "BadConfig",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::EigenFailure(_) => "EigenFailure",
            Error::Numerical(_) => "Numerical",
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
