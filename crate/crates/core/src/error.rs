//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix/vector shapes; the message names the operation.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Latitude/longitude outside the valid degree range, or non-finite.
    #[error("invalid coordinate: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Batch normalization in train mode needs at least two rows.
    #[error("batch of size {size} rejected: train-mode batch normalization needs >= 2 rows")]
    BatchTooSmall { size: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("region index {region} out of range for {num_regions} regions")]
    RegionOutOfRange { region: usize, num_regions: usize },

    /// Contrastive loss cannot normalize an exactly-zero embedding.
    #[error("zero-norm embedding at index {index} in contrastive batch")]
    ZeroNormEmbedding { index: usize },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch} ({component})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        component: String,
    },

    /// CSV ingestion problem; `line` is the 1-based line number in the file.
    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("dataset error: {0}")]
    DatasetFormat(String),

    #[error("checkpoint: bad magic bytes (not a model checkpoint)")]
    CheckpointMagic,

    #[error("checkpoint: unsupported format version {found} (supported: {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint: checksum mismatch (file corrupted)")]
    CheckpointChecksum,

    #[error("checkpoint: truncated file ({0})")]
    CheckpointTruncated(String),

    #[error("checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("model has no region branch ({0})")]
    NoRegionBranch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}
