use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid contour: {0}")]
    InvalidContour(String),

    #[error("invalid contour stack: {0}")]
    InvalidStack(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: String, found: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point inversion did not converge (best residual {residual:.4} mm)")]
    InversionFailure { residual: f64 },

    #[error("contour mapping failed for {} of {total} vertices", .failed.len())]
    MappingFailure { failed: Vec<[f64; 3]>, total: usize },

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error("unsupported transfer function version {0}")]
    UnsupportedVersion(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InversionFailure { .. } | Error::MappingFailure { .. } | Error::NotConverged(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
