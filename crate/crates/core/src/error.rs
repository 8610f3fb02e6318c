use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("raw voxel data holds {actual} bytes but header implies {expected}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("unknown element kind `{0}`")]
    UnknownElementKind(String),

    #[error("unexpected units `{found}` (expected `{expected}`)")]
    Units { expected: &'static str, found: String },

    #[error("dims must be positive, got {0:?}")]
    InvalidDims(Vec<usize>),

    #[error("spacing must be finite and positive, got {0:?}")]
    InvalidSpacing([f64; 3]),

    #[error("voxel count {actual} does not match dims product {expected}")]
    VoxelCount { expected: usize, actual: usize },

    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Vec<usize>, Vec<usize>),

    #[error("label id {0} has no entry in the label name table")]
    UnnamedLabel(u8),

    #[error("slice index {index} out of range for axis {axis} with extent {extent}")]
    SliceOutOfRange { axis: usize, index: usize, extent: usize },

    #[error("axis must be 0, 1 or 2, got {0}")]
    InvalidAxis(usize),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("unknown window preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown normalization strategy `{0}`")]
    UnknownStrategy(String),

    #[error("SWN normalization requires a window sampler")]
    MissingSampler,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("all paired differences are zero; signed-rank test is undefined")]
    AllZeroDifferences,

    #[error("invalid p-value {0}")]
    InvalidPValue(f64),

    #[error("comparison count m = {m} is smaller than the number of p-values ({len})")]
    ComparisonCount { m: usize, len: usize },

    #[error("subject sets differ between `{method}` and `{reference}` for `{organ}`")]
    SubjectMismatch {
        method: String,
        reference: String,
        organ: String,
    },

    #[error("label {0} has no voxels in any training volume")]
    EmptyLabel(u8),

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
