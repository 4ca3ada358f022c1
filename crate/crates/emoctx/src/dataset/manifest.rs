//! Line-delimited manifest files.
//!
//! A manifest is UTF-8 text, one JSON document per line. The first line is
//! a header object:
//!
//! ```text
//! {"format":"emoctx.manifest.v1","split":"train","source_tag":"EMOTIC","vad_range":[1.0,10.0]}
//! ```
//!
//! (an optional `"categories"` array overrides the canonical category
//! list), and every following line is one image record:
//!
//! ```text
//! {"image_id":"im_0001","path":"images/im_0001.png","width":640,"height":480,
//!  "persons":[{"bbox":[10.0,10.0,50.0,80.0],"categories":["Happiness"],"vad":[7.0,5.0,6.0]}]}
//! ```
//!
//! Records keep file order. Parsing validates every invariant (box
//! geometry with clipping tolerance, known category names, VAD range,
//! unique image ids) and reports the offending line on failure.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    canonical_categories, BoundingBox, DatasetManifest, ImageRecord, PersonAnnotation, Split,
    VadTriple, DEFAULT_VAD_RANGE,
};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "emoctx.manifest.v1";

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    format: String,
    split: String,
    source_tag: String,
    #[serde(default = "default_vad_range")]
    vad_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
}

fn default_vad_range() -> [f64; 2] {
    [DEFAULT_VAD_RANGE.0, DEFAULT_VAD_RANGE.1]
}

#[derive(Debug, Serialize, Deserialize)]
struct PersonLine {
    bbox: [f64; 4],
    categories: Vec<String>,
    vad: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    image_id: String,
    path: String,
    width: u32,
    height: u32,
    persons: Vec<PersonLine>,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Verify that every referenced image file exists (the default).
    pub check_files: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { check_files: true }
    }
}

/// Parse and validate a manifest file. Image paths are resolved relative
/// to the manifest's directory and must exist.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    parse_manifest_with(path, ParseOptions::default())
}

pub fn parse_manifest_with(path: &Path, opts: ParseOptions) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = parse_manifest_str(&text, &base_dir, path)?;
    if opts.check_files {
        manifest.check_files()?;
    }
    Ok(manifest)
}

/// Parse manifest text. `origin` only labels error messages.
pub fn parse_manifest_str(
    text: &str,
    base_dir: &Path,
    origin: &Path,
) -> Result<DatasetManifest> {
    let perr = |line: usize, msg: String| Error::ManifestParse {
        path: origin.to_path_buf(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_text) = lines
        .next()
        .ok_or_else(|| perr(1, "missing header line".into()))?;
    let header: HeaderLine = serde_json::from_str(header_text)
        .map_err(|e| perr(1, format!("bad header: {e}")))?;
    if header.format != MANIFEST_FORMAT {
        return Err(perr(
            1,
            format!("unknown manifest format '{}'", header.format),
        ));
    }
    let split = Split::parse(&header.split)?;
    let categories = header.categories.unwrap_or_else(canonical_categories);
    {
        let mut seen = HashSet::new();
        for name in &categories {
            if !seen.insert(name.as_str()) {
                return Err(perr(1, format!("duplicate category name '{name}'")));
            }
        }
    }
    let vad_range = (header.vad_range[0], header.vad_range[1]);
    if !(vad_range.0 < vad_range.1) {
        return Err(perr(1, format!("bad vad_range {:?}", header.vad_range)));
    }

    let mut records = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let rec: RecordLine = serde_json::from_str(line)
            .map_err(|e| perr(line_no, format!("bad record: {e}")))?;
        if rec.width == 0 || rec.height == 0 {
            return Err(perr(line_no, "zero image dimensions".into()));
        }
        if !seen_ids.insert(rec.image_id.clone()) {
            return Err(Error::DuplicateImageId {
                image_id: rec.image_id,
            });
        }
        let mut persons = Vec::with_capacity(rec.persons.len());
        for p in rec.persons {
            let raw = BoundingBox::new(p.bbox[0], p.bbox[1], p.bbox[2], p.bbox[3]);
            let bbox = raw.validated(&rec.image_id, rec.width, rec.height)?;
            if p.categories.is_empty() {
                return Err(perr(line_no, "person with empty category set".into()));
            }
            let mut cat_idx = Vec::with_capacity(p.categories.len());
            for name in &p.categories {
                let idx = categories
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::UnknownCategory { name: name.clone() })?;
                if cat_idx.contains(&idx) {
                    return Err(perr(
                        line_no,
                        format!("duplicate category '{name}' on person"),
                    ));
                }
                cat_idx.push(idx);
            }
            let vad = VadTriple::new(p.vad[0], p.vad[1], p.vad[2]);
            vad.validate(&rec.image_id, vad_range)?;
            persons.push(PersonAnnotation {
                bbox,
                categories: cat_idx,
                vad,
            });
        }
        records.push(ImageRecord {
            image_id: rec.image_id,
            path: PathBuf::from(rec.path),
            width: rec.width,
            height: rec.height,
            persons,
        });
    }

    Ok(DatasetManifest {
        split,
        source_tag: header.source_tag,
        categories,
        vad_range,
        records,
        base_dir: base_dir.to_path_buf(),
    })
}

/// Serialize a manifest back to its line-delimited form.
pub fn serialize_manifest(m: &DatasetManifest) -> String {
    let header = HeaderLine {
        format: MANIFEST_FORMAT.to_string(),
        split: m.split.as_str().to_string(),
        source_tag: m.source_tag.clone(),
        vad_range: [m.vad_range.0, m.vad_range.1],
        categories: if m.is_canonical_categories() {
            None
        } else {
            Some(m.categories.clone())
        },
    };
    let mut out = serde_json::to_string(&header).expect("header");
    out.push('\n');
    for r in &m.records {
        let line = RecordLine {
            image_id: r.image_id.clone(),
            path: r.path.to_string_lossy().into_owned(),
            width: r.width,
            height: r.height,
            persons: r
                .persons
                .iter()
                .map(|p| PersonLine {
                    bbox: [p.bbox.x1, p.bbox.y1, p.bbox.x2, p.bbox.y2],
                    categories: p
                        .categories
                        .iter()
                        .map(|&i| m.categories[i].clone())
                        .collect(),
                    vad: p.vad.as_array(),
                })
                .collect(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("record"));
    }
    out
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, serialize_manifest(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CATEGORY_COUNT;

    fn header() -> String {
        format!(
            r#"{{"format":"{MANIFEST_FORMAT}","split":"train","source_tag":"EMOTIC"}}"#
        )
    }

    fn record(id: &str, bbox: [f64; 4], cats: &[&str], vad: [f64; 3]) -> String {
        let cats: Vec<String> = cats.iter().map(|c| format!("\"{c}\"")).collect();
        format!(
            r#"{{"image_id":"{id}","path":"images/{id}.png","width":100,"height":100,"persons":[{{"bbox":[{},{},{},{}],"categories":[{}],"vad":[{},{},{}]}}]}}"#,
            bbox[0],
            bbox[1],
            bbox[2],
            bbox[3],
            cats.join(","),
            vad[0],
            vad[1],
            vad[2]
        )
    }

    fn parse(text: &str) -> Result<DatasetManifest> {
        parse_manifest_str(text, Path::new("."), Path::new("test.manifest"))
    }

    #[test]
    fn minimal_manifest_parses() {
        let text = format!(
            "{}\n{}\n",
            header(),
            record("im1", [10.0, 10.0, 50.0, 80.0], &["Happiness"], [7.0, 5.0, 6.0])
        );
        let m = parse(&text).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.person_count(), 1);
        assert_eq!(m.categories.len(), CATEGORY_COUNT);
        let p = &m.records[0].persons[0];
        assert_eq!(p.bbox, BoundingBox::new(10.0, 10.0, 50.0, 80.0));
        assert_eq!(p.categories, vec![16]); // Happiness
        assert_eq!(p.vad, VadTriple::new(7.0, 5.0, 6.0));
    }

    #[test]
    fn degenerate_bbox_is_rejected() {
        let text = format!(
            "{}\n{}\n",
            header(),
            record("im1", [50.0, 10.0, 10.0, 80.0], &["Happiness"], [7.0, 5.0, 6.0])
        );
        let err = parse(&text).unwrap_err();
        assert!(
            err.to_string().contains("degenerate bounding box"),
            "got: {err}"
        );
    }

    #[test]
    fn single_person_shape_counts_match() {
        // 100 records with exactly one person each.
        let mut text = header();
        text.push('\n');
        for i in 0..100 {
            text.push_str(&record(
                &format!("im{i:03}"),
                [5.0, 5.0, 60.0, 90.0],
                &["Peace"],
                [5.0, 5.0, 5.0],
            ));
            text.push('\n');
        }
        let m = parse(&text).unwrap();
        assert_eq!(m.records.len(), 100);
        assert_eq!(m.person_count(), 100);
    }

    #[test]
    fn unknown_category_is_rejected() {
        let text = format!(
            "{}\n{}\n",
            header(),
            record("im1", [10.0, 10.0, 50.0, 80.0], &["Serenity"], [7.0, 5.0, 6.0])
        );
        assert!(matches!(
            parse(&text).unwrap_err(),
            Error::UnknownCategory { .. }
        ));
    }

    #[test]
    fn vad_out_of_range_is_rejected() {
        let text = format!(
            "{}\n{}\n",
            header(),
            record("im1", [10.0, 10.0, 50.0, 80.0], &["Happiness"], [0.5, 5.0, 6.0])
        );
        assert!(matches!(
            parse(&text).unwrap_err(),
            Error::VadOutOfRange { .. }
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\nnot json\n", header());
        match parse(&text).unwrap_err() {
            Error::ManifestParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_image_id_rejected() {
        let rec = record("im1", [10.0, 10.0, 50.0, 80.0], &["Happiness"], [7.0, 5.0, 6.0]);
        let text = format!("{}\n{rec}\n{rec}\n", header());
        assert!(matches!(
            parse(&text).unwrap_err(),
            Error::DuplicateImageId { .. }
        ));
    }

    #[test]
    fn duplicate_person_category_rejected() {
        let text = format!(
            "{}\n{}\n",
            header(),
            record(
                "im1",
                [10.0, 10.0, 50.0, 80.0],
                &["Happiness", "Happiness"],
                [7.0, 5.0, 6.0]
            )
        );
        assert!(parse(&text).is_err());
    }

    #[test]
    fn round_trip_identity() {
        let text = format!(
            "{}\n{}\n{}\n",
            header(),
            record("im1", [10.0, 10.0, 50.5, 80.25], &["Happiness", "Peace"], [7.0, 5.5, 6.0]),
            record("im2", [0.0, 0.0, 100.0, 100.0], &["Anger"], [1.0, 10.0, 3.3])
        );
        let m1 = parse(&text).unwrap();
        let m2 = parse(&serialize_manifest(&m1)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn custom_category_header_is_honored() {
        let text = format!(
            "{}\n{}\n",
            format!(
                r#"{{"format":"{MANIFEST_FORMAT}","split":"test","source_tag":"X","categories":["Joy","Gloom"]}}"#
            ),
            r#"{"image_id":"a","path":"a.png","width":10,"height":10,"persons":[{"bbox":[1,1,9,9],"categories":["Gloom"],"vad":[5,5,5]}]}"#
        );
        let m = parse(&text).unwrap();
        assert_eq!(m.categories, vec!["Joy", "Gloom"]);
        assert!(!m.is_canonical_categories());
        assert_eq!(m.records[0].persons[0].categories, vec![1]);
        // Round-trips through the custom list too.
        let m2 = parse(&serialize_manifest(&m)).unwrap();
        assert_eq!(m, m2);
    }
}
