//! Conversion of third-party annotation tables into manifests.
//!
//! The CSV layout is one annotated person per row:
//!
//! ```text
//! image_id,path,width,height,x1,y1,x2,y2,categories,valence,arousal,dominance
//! ```
//!
//! `categories` is a `|`-separated list of category names, first name
//! being the predominant one. Consecutive rows sharing an `image_id`
//! merge into one record with several persons; the same id reappearing
//! after a different one is an error, since that usually means the table
//! was sorted by something else and person grouping would be silently
//! wrong.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{
    canonical_categories, BoundingBox, DatasetManifest, ImageRecord, PersonAnnotation, Split,
    VadTriple, DEFAULT_VAD_RANGE,
};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct CsvRow {
    image_id: String,
    path: String,
    width: u32,
    height: u32,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    categories: String,
    valence: f64,
    arousal: f64,
    dominance: f64,
}

/// Convert a per-person CSV table into a validated manifest. `base_dir`
/// is recorded for path resolution; image files are not required to
/// exist at conversion time.
pub fn convert_csv(
    csv_path: &Path,
    split: Split,
    source_tag: &str,
    base_dir: &Path,
) -> Result<DatasetManifest> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let categories = canonical_categories();
    let vad_range = DEFAULT_VAD_RANGE;

    let mut records: Vec<ImageRecord> = Vec::new();
    let mut finished_ids: HashSet<String> = HashSet::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        // Header is line 1; data row i is line i + 2.
        let line = i + 2;
        let perr = |msg: String| Error::ManifestParse {
            path: csv_path.to_path_buf(),
            line,
            msg,
        };
        let row = row.map_err(|e| perr(format!("bad row: {e}")))?;
        if row.width == 0 || row.height == 0 {
            return Err(perr("zero image dimensions".into()));
        }

        let bbox = BoundingBox::new(row.x1, row.y1, row.x2, row.y2)
            .validated(&row.image_id, row.width, row.height)?;
        let mut cat_idx = Vec::new();
        for name in row.categories.split('|').map(str::trim) {
            if name.is_empty() {
                continue;
            }
            let idx = categories
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::UnknownCategory {
                    name: name.to_string(),
                })?;
            if !cat_idx.contains(&idx) {
                cat_idx.push(idx);
            }
        }
        if cat_idx.is_empty() {
            return Err(perr("person with empty category set".into()));
        }
        let vad = VadTriple::new(row.valence, row.arousal, row.dominance);
        vad.validate(&row.image_id, vad_range)?;
        let person = PersonAnnotation {
            bbox,
            categories: cat_idx,
            vad,
        };

        match records.last_mut() {
            Some(last) if last.image_id == row.image_id => {
                if last.path != PathBuf::from(&row.path)
                    || last.width != row.width
                    || last.height != row.height
                {
                    return Err(perr(format!(
                        "rows for image '{}' disagree on path or dimensions",
                        row.image_id
                    )));
                }
                last.persons.push(person);
            }
            _ => {
                if !finished_ids.insert(row.image_id.clone()) {
                    return Err(Error::DuplicateImageId {
                        image_id: row.image_id,
                    });
                }
                records.push(ImageRecord {
                    image_id: row.image_id,
                    path: PathBuf::from(row.path),
                    width: row.width,
                    height: row.height,
                    persons: vec![person],
                });
            }
        }
    }

    if records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(DatasetManifest {
        split,
        source_tag: source_tag.to_string(),
        categories,
        vad_range,
        records,
        base_dir: base_dir.to_path_buf(),
    })
}
