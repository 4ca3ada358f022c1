//! Crate-wide error type.
//!
//! Variants are grouped into validation errors (bad inputs, bad configs,
//! contract violations) and runtime errors (I/O, decode failures, training
//! divergence). The CLI maps the two groups to exit codes 2 and 3.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed manifest line: {msg}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("image '{image_id}': degenerate bounding box [{x1}, {y1}, {x2}, {y2}]")]
    DegenerateBbox {
        image_id: String,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },

    #[error(
        "image '{image_id}': bounding box [{x1}, {y1}, {x2}, {y2}] outside {width}x{height} image (beyond clip tolerance)"
    )]
    BboxOutOfBounds {
        image_id: String,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: u32,
        height: u32,
    },

    #[error("unknown emotion category '{name}'")]
    UnknownCategory { name: String },

    #[error("image '{image_id}': VAD value {value} outside [{lo}, {hi}]")]
    VadOutOfRange {
        image_id: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("duplicate image_id '{image_id}' in manifest")]
    DuplicateImageId { image_id: String },

    #[error("image file for '{image_id}' not found: {path}")]
    MissingImageFile { image_id: String, path: PathBuf },

    #[error("manifest is empty")]
    EmptyManifest,

    #[error("unknown backbone '{name}' (supported: resnet18, resnet50)")]
    UnknownBackbone { name: String },

    #[error("pretrained weights for {backbone}/{scheme} not found at {path} (run fetch-weights or disable pretraining)")]
    MissingWeights {
        backbone: String,
        scheme: String,
        path: PathBuf,
    },

    #[error("{context}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{context}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("category weight {index} is not strictly positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("category '{category}' has no positive labels")]
    NoPositives { category: String },

    #[error("category set mismatch: {detail}")]
    CategorySetMismatch { detail: String },

    #[error("unregistered stylizer '{id}'")]
    UnregisteredStylizer { id: String },

    #[error("invalid configuration: {msg}")]
    InvalidConfig { msg: String },

    #[error("malformed checkpoint {path}: {msg}")]
    BadCheckpoint { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("cannot encode image {path}: {source}")]
    ImageEncode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("stylization job finished with {failed} failed image(s); see job log {log}")]
    StylizeJobFailed { failed: usize, log: PathBuf },
}

impl Error {
    /// True for errors caused by invalid inputs or configuration, as opposed
    /// to runtime failures (I/O, divergence).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::ImageDecode { .. }
                | Error::ImageEncode { .. }
                | Error::Diverged { .. }
                | Error::StylizeJobFailed { .. }
        )
    }

    /// CLI exit code: 2 for validation errors, 3 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            3
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
