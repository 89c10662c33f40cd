use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid MetaImage header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("raw payload {path} holds {actual} bytes, header requires {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("mask is not binary: voxel {index} holds value {value}")]
    NotBinary { index: usize, value: u8 },

    #[error("{0} has no foreground voxels")]
    EmptyMask(&'static str),

    #[error("{0} has no background voxels")]
    FullMask(&'static str),

    #[error("foreground touches the grid boundary; pad the volume first")]
    TouchesBoundary,

    #[error("grid geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("point of entry coincides with the lesion center")]
    CoincidentPoints,

    #[error("transformed lesion falls entirely outside the target grid")]
    LesionOutsideGrid,

    #[error("phantom {what} does not fit in the grid")]
    OutsideGrid { what: String },

    #[error("no candidate voxel within tolerance of percentile {percentile} (distance {target_mm:.4} mm)")]
    EmptyToleranceBand { percentile: f64, target_mm: f64 },

    #[error("invalid configuration at {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("CSV export failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by the environment rather than by the input data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
