//! Procedural smoke datasets.
//!
//! Generates small labeled datasets where the annotated person region
//! is filled with a category-specific color over a noisy background and
//! the affect targets are anchored per category. Color linearly encodes
//! the category, which [`linear_probe_accuracy`] verifies directly, so
//! a model that cannot learn these sets is broken, not unlucky.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;

use crate::dataset::preprocess::save_image;
use crate::dataset::{
    canonical_categories, BoundingBox, DatasetManifest, ImageRecord, PersonAnnotation, Split,
    VadTriple, CATEGORY_COUNT,
};
use crate::error::{Error, Result};
use crate::seeded_rng;

/// Body-region colors, chosen far apart in RGB.
const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.15],
    [0.15, 0.20, 0.90],
    [0.92, 0.85, 0.10],
    [0.85, 0.10, 0.85],
    [0.10, 0.85, 0.85],
    [0.95, 0.55, 0.10],
    [0.45, 0.28, 0.12],
];

/// Affect anchors per palette slot, inside the [1, 10] range.
const VAD_ANCHORS: [[f64; 3]; 8] = [
    [8.0, 6.5, 7.0],
    [3.0, 8.0, 6.0],
    [2.0, 3.0, 3.0],
    [7.5, 4.0, 5.5],
    [4.5, 7.0, 2.5],
    [6.0, 2.5, 8.0],
    [5.0, 5.5, 4.0],
    [2.5, 6.0, 7.5],
];

/// Shape of a generated dataset.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub images: usize,
    /// Square image side in pixels.
    pub side: usize,
    pub persons_per_image: usize,
    /// Canonical category indices to cycle through (at most 8).
    pub category_indices: Vec<usize>,
    pub split: Split,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            images: 64,
            side: 64,
            persons_per_image: 1,
            category_indices: default_category_indices(),
            split: Split::Train,
            seed: 0,
        }
    }
}

/// Four well-separated canonical categories.
pub fn default_category_indices() -> Vec<usize> {
    let names = canonical_categories();
    ["Happiness", "Anger", "Sadness", "Fear"]
        .iter()
        .map(|n| names.iter().position(|c| c == n).expect("canonical name"))
        .collect()
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig { msg });
        if self.images == 0 {
            return bad("image count must be positive".to_string());
        }
        if self.side < 8 {
            return bad(format!("side {} too small (minimum 8)", self.side));
        }
        if self.persons_per_image == 0 || self.persons_per_image > 4 {
            return bad(format!(
                "persons_per_image {} outside 1..=4",
                self.persons_per_image
            ));
        }
        if self.category_indices.is_empty() || self.category_indices.len() > PALETTE.len() {
            return bad(format!(
                "category count {} outside 1..={}",
                self.category_indices.len(),
                PALETTE.len()
            ));
        }
        let mut sorted = self.category_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.category_indices.len() {
            return bad("duplicate category indices".to_string());
        }
        if let Some(&i) = self.category_indices.iter().find(|&&i| i >= CATEGORY_COUNT) {
            return bad(format!("category index {i} out of range"));
        }
        Ok(())
    }
}

/// Generate the dataset under `out_dir` (`images/` plus
/// `manifest.jsonl`) and return its manifest. Fully determined by the
/// spec, including all noise.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let side = spec.side;
    let k = spec.category_indices.len();
    let mut records = Vec::with_capacity(spec.images);
    let mut sample = 0usize;
    for i in 0..spec.images {
        let mut rng = seeded_rng(spec.seed, &format!("synth/image/{i}"));
        let mut img = Array3::<f32>::zeros((3, side, side));
        // Textured gray background.
        for v in img.iter_mut() {
            *v = rng.gen_range(0.35..0.65);
        }

        // Persons occupy disjoint vertical strips.
        let strip = side / spec.persons_per_image;
        let mut persons = Vec::with_capacity(spec.persons_per_image);
        for p in 0..spec.persons_per_image {
            let slot = sample % k;
            sample += 1;
            let color = PALETTE[slot];
            let anchor = VAD_ANCHORS[slot];

            // Box inset into the strip, with a little jitter.
            let margin = (strip / 6).max(1);
            let x1 = p * strip + margin + rng.gen_range(0..=margin.min(2));
            let x2 = (p + 1) * strip - margin - rng.gen_range(0..=margin.min(2));
            let y1 = side / 5 + rng.gen_range(0..=2);
            let y2 = side - side / 5 - rng.gen_range(0..=2);
            for c in 0..3 {
                for y in y1..y2 {
                    for x in x1..x2 {
                        img[[c, y, x]] = (color[c] + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
                    }
                }
            }

            let vad = VadTriple::new(
                (anchor[0] + rng.gen_range(-0.3..0.3)).clamp(1.0, 10.0),
                (anchor[1] + rng.gen_range(-0.3..0.3)).clamp(1.0, 10.0),
                (anchor[2] + rng.gen_range(-0.3..0.3)).clamp(1.0, 10.0),
            );
            persons.push(PersonAnnotation {
                bbox: BoundingBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64),
                categories: vec![spec.category_indices[slot]],
                vad,
            });
        }

        let rel = PathBuf::from("images").join(format!("img{i:04}.png"));
        save_image(&img.view(), &out_dir.join(&rel))?;
        records.push(ImageRecord {
            image_id: format!("synth-{i:04}"),
            path: rel,
            width: side as u32,
            height: side as u32,
            persons,
        });
    }

    let manifest = DatasetManifest {
        split: spec.split,
        source_tag: "synth".to_string(),
        categories: canonical_categories(),
        vad_range: (1.0, 10.0),
        records,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Fit a least-squares linear classifier on each person's mean crop
/// color and report its training accuracy for predominant categories.
/// A dataset is only a fair learnability smoke test if this is ~1.
pub fn linear_probe_accuracy(manifest: &DatasetManifest) -> Result<f64> {
    let mut features: Vec<[f64; 4]> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut class_of: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for record in &manifest.records {
        let img = crate::dataset::preprocess::load_image(&manifest.resolve_path(record))?;
        for person in &record.persons {
            let b = &person.bbox;
            let (x1, y1) = (b.x1.floor() as usize, b.y1.floor() as usize);
            let (x2, y2) = (
                (b.x2.ceil() as usize).min(record.width as usize),
                (b.y2.ceil() as usize).min(record.height as usize),
            );
            let mut mean = [0.0f64; 4];
            mean[3] = 1.0;
            let count = ((x2 - x1) * (y2 - y1)) as f64;
            for c in 0..3 {
                for y in y1..y2 {
                    for x in x1..x2 {
                        mean[c] += img[[c, y, x]] as f64;
                    }
                }
                mean[c] /= count;
            }
            features.push(mean);
            let next = class_of.len();
            let class = *class_of.entry(person.categories[0]).or_insert(next);
            labels.push(class);
        }
    }
    let n = features.len();
    let k = class_of.len();
    if n == 0 || k < 2 {
        return Err(Error::InvalidConfig {
            msg: format!("probe needs >= 2 classes over >= 1 person, got {k} over {n}"),
        });
    }

    // Normal equations: (X^T X) W = X^T Y with one-hot Y.
    let mut xtx = [[0.0f64; 4]; 4];
    let mut xty = vec![[0.0f64; 4]; k];
    for (f, &l) in features.iter().zip(&labels) {
        for a in 0..4 {
            for b in 0..4 {
                xtx[a][b] += f[a] * f[b];
            }
            xty[l][a] += f[a];
        }
    }
    for a in 0..4 {
        xtx[a][a] += 1e-9; // ridge for numerical safety
    }
    let w: Vec<[f64; 4]> = (0..k).map(|c| solve4(xtx, xty[c])).collect();

    let correct = features
        .iter()
        .zip(&labels)
        .filter(|(f, &l)| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (c, wc) in w.iter().enumerate() {
                let v: f64 = (0..4).map(|a| wc[a] * f[a]).sum();
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best == l
        })
        .count();
    Ok(correct as f64 / n as f64)
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for row in (col + 1)..4 {
            let f = a[row][col] / d;
            for c in col..4 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut v = b[row];
        for c in (row + 1)..4 {
            v -= a[row][c] * x[c];
        }
        x[row] = v / a[row][row];
    }
    x
}
