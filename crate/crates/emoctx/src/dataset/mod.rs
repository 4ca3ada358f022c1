//! Annotation data model and dataset ingestion.
//!
//! A dataset is described by a line-delimited manifest (see [`manifest`])
//! whose records carry per-person bounding boxes, discrete emotion labels
//! and continuous valence/arousal/dominance annotations. Preprocessing
//! ([`preprocess`]) turns records into normalized body-crop and context
//! tensors; [`convert`] ingests external annotation exports.

pub mod convert;
pub mod manifest;
pub mod preprocess;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use manifest::{
    parse_manifest, parse_manifest_str, parse_manifest_with, serialize_manifest, ParseOptions,
};

/// Number of discrete emotion categories.
pub const CATEGORY_COUNT: usize = 26;

/// Canonical category names, fixed at build time. Indices into this list
/// are the category ids used throughout ingestion, training and reporting.
pub const CATEGORY_NAMES: [&str; CATEGORY_COUNT] = [
    "Affection",
    "Anger",
    "Annoyance",
    "Anticipation",
    "Aversion",
    "Confidence",
    "Disapproval",
    "Disconnection",
    "Disquietment",
    "Doubt/Confusion",
    "Embarrassment",
    "Engagement",
    "Esteem",
    "Excitement",
    "Fatigue",
    "Fear",
    "Happiness",
    "Pain",
    "Peace",
    "Pleasure",
    "Sadness",
    "Sensitivity",
    "Suffering",
    "Surprise",
    "Sympathy",
    "Yearning",
];

/// Index of a canonical category name, if known.
pub fn category_index(name: &str) -> Option<usize> {
    CATEGORY_NAMES.iter().position(|&n| n == name)
}

pub fn canonical_categories() -> Vec<String> {
    CATEGORY_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Default ground-truth scale for the continuous dimensions.
pub const DEFAULT_VAD_RANGE: (f64, f64) = (1.0, 10.0);

/// Bounding boxes may overhang the image by up to this many pixels and are
/// clipped silently; anything beyond is an ingestion error.
pub const BBOX_CLIP_TOLERANCE: f64 = 2.0;

/// Valence/arousal/dominance triple on the annotation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadTriple {
    pub valence: f64,
    pub arousal: f64,
    pub dominance: f64,
}

impl VadTriple {
    pub fn new(valence: f64, arousal: f64, dominance: f64) -> Self {
        VadTriple {
            valence,
            arousal,
            dominance,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.valence, self.arousal, self.dominance]
    }

    fn validate(&self, image_id: &str, range: (f64, f64)) -> Result<()> {
        for v in self.as_array() {
            if !v.is_finite() || v < range.0 || v > range.1 {
                return Err(Error::VadOutOfRange {
                    image_id: image_id.to_string(),
                    value: v,
                    lo: range.0,
                    hi: range.1,
                });
            }
        }
        Ok(())
    }
}

/// Axis-aligned box in image pixel coordinates, origin top-left,
/// `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Mirror across the vertical axis of an image of the given width.
    pub fn flip_horizontal(&self, image_width: f64) -> BoundingBox {
        BoundingBox {
            x1: image_width - self.x2,
            y1: self.y1,
            x2: image_width - self.x1,
            y2: self.y2,
        }
    }

    /// Validate against image bounds, clipping overhang up to
    /// [`BBOX_CLIP_TOLERANCE`] pixels. Returns the clipped box.
    pub fn validated(&self, image_id: &str, width: u32, height: u32) -> Result<BoundingBox> {
        let err_oob = || Error::BboxOutOfBounds {
            image_id: image_id.to_string(),
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            width,
            height,
        };
        let (w, h) = (width as f64, height as f64);
        if !self.x1.is_finite() || !self.y1.is_finite() || !self.x2.is_finite() || !self.y2.is_finite()
        {
            return Err(err_oob());
        }
        if self.x1 < -BBOX_CLIP_TOLERANCE
            || self.y1 < -BBOX_CLIP_TOLERANCE
            || self.x2 > w + BBOX_CLIP_TOLERANCE
            || self.y2 > h + BBOX_CLIP_TOLERANCE
        {
            return Err(err_oob());
        }
        let clipped = BoundingBox {
            x1: self.x1.max(0.0),
            y1: self.y1.max(0.0),
            x2: self.x2.min(w),
            y2: self.y2.min(h),
        };
        if clipped.x1 >= clipped.x2 || clipped.y1 >= clipped.y2 {
            return Err(Error::DegenerateBbox {
                image_id: image_id.to_string(),
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            });
        }
        if clipped.area() < 1.0 {
            return Err(Error::DegenerateBbox {
                image_id: image_id.to_string(),
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            });
        }
        Ok(clipped)
    }
}

/// One annotated person: location, discrete labels and VAD triple.
///
/// `categories` holds indices into the manifest's category list, in the
/// order they were listed (the first entry is the predominant one),
/// duplicate-free and non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonAnnotation {
    pub bbox: BoundingBox,
    pub categories: Vec<usize>,
    pub vad: VadTriple,
}

impl PersonAnnotation {
    pub fn has_category(&self, idx: usize) -> bool {
        self.categories.contains(&idx)
    }
}

/// One image plus its annotated persons; the unit of ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    /// Path relative to the manifest's directory.
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub persons: Vec<PersonAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig {
                msg: format!("unknown split '{other}' (expected train/val/test)"),
            }),
        }
    }
}

/// A loaded dataset: header fields plus validated records, in file order.
///
/// Immutable after load and safe to share across parallel workers.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: Split,
    pub source_tag: String,
    /// Category list; the canonical 26 unless the manifest header overrides
    /// it (training refuses non-canonical lists, evaluation cross-checks
    /// them against the checkpoint).
    pub categories: Vec<String>,
    pub vad_range: (f64, f64),
    pub records: Vec<ImageRecord>,
    /// Directory image paths are resolved against; not part of the
    /// serialized form.
    pub base_dir: PathBuf,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split
            && self.source_tag == other.source_tag
            && self.categories == other.categories
            && self.vad_range == other.vad_range
            && self.records == other.records
    }
}

impl DatasetManifest {
    /// Absolute (or base-relative) path of a record's image file.
    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        self.base_dir.join(&record.path)
    }

    /// Total number of annotated persons across all records.
    pub fn person_count(&self) -> usize {
        self.records.iter().map(|r| r.persons.len()).sum()
    }

    /// All (record, person) pairs in manifest order. Records without
    /// persons contribute nothing, so training and evaluation iterators
    /// skip them naturally.
    pub fn iter_persons(&self) -> impl Iterator<Item = (&ImageRecord, &PersonAnnotation)> {
        self.records
            .iter()
            .flat_map(|r| r.persons.iter().map(move |p| (r, p)))
    }

    pub fn is_canonical_categories(&self) -> bool {
        self.categories.len() == CATEGORY_COUNT
            && self
                .categories
                .iter()
                .zip(CATEGORY_NAMES.iter())
                .all(|(a, &b)| a == b)
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|n| n == name)
    }

    /// Check that every referenced image file exists.
    pub fn check_files(&self) -> Result<()> {
        for r in &self.records {
            let p = self.resolve_path(r);
            if !p.is_file() {
                return Err(Error::MissingImageFile {
                    image_id: r.image_id.clone(),
                    path: p,
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        manifest::save_manifest(self, path)
    }
}
