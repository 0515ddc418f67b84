use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MdmdError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants carry enough context (schema name, face id, offending index) to
/// be printed as a single diagnostic line.
#[derive(Debug, Error)]
pub enum MdmdError {
    #[error("parse: {0}")]
    Parse(String),

    #[error("schema `{schema}`: {reason}")]
    Schema { schema: String, reason: String },

    #[error("unknown schema `{0}`")]
    UnknownSchema(String),

    #[error("unknown dataset id {id} (schema set has {count})")]
    UnknownDataset { id: usize, count: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image: {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("face `{face_id}`: expected {expected} landmarks, found {found}")]
    LandmarkCount {
        face_id: String,
        expected: usize,
        found: usize,
    },

    #[error("face `{face_id}`: bounding box lies outside the image")]
    BboxOutside { face_id: String },

    #[error("flip augmentation requested but schema `{0}` has no flip permutation")]
    MissingFlipPermutation(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at step {step} on dataset {dataset_id} (faces: {face_ids:?})")]
    NonFiniteLoss {
        step: u64,
        dataset_id: usize,
        face_ids: Vec<String>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("schema fingerprint mismatch: checkpoint {checkpoint}, data {data}")]
    FingerprintMismatch { checkpoint: String, data: String },
}

impl MdmdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MdmdError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(schema: &str, reason: impl Into<String>) -> Self {
        MdmdError::Schema {
            schema: schema.to_string(),
            reason: reason.into(),
        }
    }

    /// Short machine-parsable tag used as the prefix of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            MdmdError::Parse(_) => "parse",
            MdmdError::Schema { .. } => "schema",
            MdmdError::UnknownSchema(_) => "unknown-schema",
            MdmdError::UnknownDataset { .. } => "unknown-dataset",
            MdmdError::Shape(_) => "shape",
            MdmdError::Config(_) => "config",
            MdmdError::Io { .. } => "io",
            MdmdError::Image { .. } => "image",
            MdmdError::MissingFile(_) => "missing-file",
            MdmdError::LandmarkCount { .. } => "landmark-count",
            MdmdError::BboxOutside { .. } => "bbox",
            MdmdError::MissingFlipPermutation(_) => "flip",
            MdmdError::Empty(_) => "empty",
            MdmdError::NonFiniteLoss { .. } => "non-finite-loss",
            MdmdError::Checkpoint(_) => "checkpoint",
            MdmdError::FingerprintMismatch { .. } => "fingerprint",
        }
    }
}
