//! Dataset stylization.
//!
//! Turns a photographic dataset into an artwork-styled variant while
//! passing every annotation through unchanged. Stylizers are pluggable;
//! the shipped baseline matches per-channel feature statistics in a
//! fixed, exactly invertible color basis (weights committed as a
//! container asset), with `strength` interpolating linearly between the
//! content's statistics (0) and the style's (1). Swapping in a heavier
//! transfer method only requires registering another [`Stylizer`].

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayView3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ckpt::Container;
use crate::dataset::preprocess::{bilinear_resize, load_image, save_image};
use crate::dataset::{DatasetManifest, ImageRecord};
use crate::error::{Error, Result};
use crate::{exec, seeded_rng};

/// A directory of style images plus the seed that drives assignment.
#[derive(Debug, Clone)]
pub struct StyleCorpus {
    pub paths: Vec<PathBuf>,
    pub sampling_seed: u64,
}

impl StyleCorpus {
    /// Build from explicit paths; every file must exist.
    pub fn new(paths: Vec<PathBuf>, sampling_seed: u64) -> Result<StyleCorpus> {
        if paths.is_empty() {
            return Err(Error::InvalidConfig {
                msg: "style corpus is empty".to_string(),
            });
        }
        for p in &paths {
            if !p.is_file() {
                return Err(Error::io(
                    p.clone(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "style image not found"),
                ));
            }
        }
        Ok(StyleCorpus {
            paths,
            sampling_seed,
        })
    }

    /// Collect the image files of a directory, sorted by name so the
    /// corpus ordering (and thus assignment) is stable.
    pub fn from_dir(dir: &Path, sampling_seed: u64) -> Result<StyleCorpus> {
        let mut paths = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let p = entry.path();
            let ext = p
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) && p.is_file() {
                paths.push(p);
            }
        }
        paths.sort();
        Self::new(paths, sampling_seed)
    }

    /// Human-readable identifier of one style (its file name).
    pub fn style_id(&self, index: usize) -> String {
        self.paths[index]
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("style-{index}"))
    }
}

/// Everything a stylization run needs.
#[derive(Debug, Clone)]
pub struct StylizationJob {
    pub source: DatasetManifest,
    pub styles: StyleCorpus,
    pub stylizer_id: String,
    /// 0 leaves images untouched, 1 fully adopts style statistics.
    pub strength: f32,
    pub output_dir: PathBuf,
}

/// A pluggable image stylizer. Inputs and outputs are `[3, H, W]`
/// tensors in `[0, 1]` scale; the output must keep the content's exact
/// dimensions. Values may leave `[0, 1]`; they are clamped at encode
/// time when written to disk.
pub trait Stylizer: Send + Sync {
    fn id(&self) -> &'static str;
    fn stylize(
        &self,
        content: &ArrayView3<f32>,
        style: &ArrayView3<f32>,
        strength: f32,
    ) -> Result<Array3<f32>>;
}

/// Returns the content unchanged; useful as a pipeline no-op and in
/// tests.
#[derive(Debug, Clone, Default)]
pub struct IdentityStylizer;

impl Stylizer for IdentityStylizer {
    fn id(&self) -> &'static str {
        "identity"
    }

    fn stylize(
        &self,
        content: &ArrayView3<f32>,
        _style: &ArrayView3<f32>,
        strength: f32,
    ) -> Result<Array3<f32>> {
        check_strength(strength)?;
        Ok(content.to_owned())
    }
}

const CODEC_ASSET: &[u8] = include_bytes!("../../assets/featstat_codec.ckpt");

/// The baseline stylizer: per-channel statistics matching in a fixed
/// orthonormal color basis.
///
/// Pixels are encoded by a fixed linear map, each feature channel is
/// normalized and rescaled so its mean and standard deviation land on
/// the linear interpolation between content and style statistics, and
/// the result is decoded by the exact inverse map. A content channel
/// with no variation cannot carry the style's spread, so the style's own
/// pattern (resampled to the content's geometry and normalized) is used
/// as the carrier there. For a fixed input pair, every output pixel is
/// an affine function of `strength`.
#[derive(Debug, Clone)]
pub struct FeatureStatsStylizer {
    encode: [[f32; 3]; 3],
    decode: [[f32; 3]; 3],
}

impl Default for FeatureStatsStylizer {
    fn default() -> Self {
        Self::new()
    }
}

const DEGENERATE_STD: f64 = 1e-6;

impl FeatureStatsStylizer {
    /// Load the fixed codec from the committed asset.
    pub fn new() -> FeatureStatsStylizer {
        let container =
            Container::load_bytes(CODEC_ASSET, "assets/featstat_codec.ckpt").expect("codec asset");
        let read = |name: &str| -> [[f32; 3]; 3] {
            let t = container.get(name).expect("codec tensor");
            assert_eq!(t.shape, [3, 3], "codec tensor shape");
            let mut m = [[0f32; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] = t.data[r * 3 + c];
                }
            }
            m
        };
        FeatureStatsStylizer {
            encode: read("encode.weight"),
            decode: read("decode.weight"),
        }
    }

    fn apply(m: &[[f32; 3]; 3], img: &ArrayView3<f32>) -> Array3<f32> {
        let (_, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let mut out = Array3::<f32>::zeros((3, h, w));
        for r in 0..3 {
            let mut plane = out.index_axis_mut(Axis(0), r);
            for k in 0..3 {
                let src = img.index_axis(Axis(0), k);
                let coeff = m[r][k];
                plane.zip_mut_with(&src, |o, &v| *o += coeff * v);
            }
        }
        out
    }

    /// Encode an image into the fixed feature basis.
    pub fn encode_features(&self, img: &ArrayView3<f32>) -> Array3<f32> {
        Self::apply(&self.encode, img)
    }

    fn decode_features(&self, feats: &ArrayView3<f32>) -> Array3<f32> {
        Self::apply(&self.decode, feats)
    }
}

/// Per-channel mean and population standard deviation, accumulated in
/// f64.
pub fn channel_stats(feats: &ArrayView3<f32>) -> Vec<(f64, f64)> {
    feats
        .axis_iter(Axis(0))
        .map(|plane| {
            let n = plane.len() as f64;
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = plane
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect()
}

impl Stylizer for FeatureStatsStylizer {
    fn id(&self) -> &'static str {
        "featstat"
    }

    fn stylize(
        &self,
        content: &ArrayView3<f32>,
        style: &ArrayView3<f32>,
        strength: f32,
    ) -> Result<Array3<f32>> {
        check_strength(strength)?;
        let check_planes = |name: &str, shape: &[usize]| -> Result<()> {
            if shape[0] != 3 {
                return Err(Error::ShapeMismatch {
                    context: "stylize",
                    expected: "[3, H, W]".to_string(),
                    actual: format!("{name} {shape:?}"),
                });
            }
            Ok(())
        };
        check_planes("content", content.shape())?;
        check_planes("style", style.shape())?;
        let (h, w) = (content.shape()[1], content.shape()[2]);
        let s = strength as f64;

        let mut feats = self.encode_features(content);
        let content_stats = channel_stats(&feats.view());
        let style_stats = channel_stats(&self.encode_features(style).view());

        // Carrier for channels the content leaves flat; built lazily since
        // natural photographs rarely need it.
        let mut carrier: Option<Array3<f32>> = None;

        for c in 0..3 {
            let (mc, sc) = content_stats[c];
            let (ms, ss) = style_stats[c];
            let mt = (1.0 - s) * mc + s * ms;
            let st = (1.0 - s) * sc + s * ss;
            let mut plane = feats.index_axis_mut(Axis(0), c);
            if sc > DEGENERATE_STD {
                let gain = (st / sc) as f32;
                let bias = (mt - mc * st / sc) as f32;
                plane.mapv_inplace(|v| v * gain + bias);
            } else {
                let carrier = carrier.get_or_insert_with(|| {
                    self.encode_features(&bilinear_resize(style, h, w).view())
                });
                let cplane = carrier.index_axis(Axis(0), c);
                let (mr, sr) = channel_stats(&carrier.view())[c];
                if sr > DEGENERATE_STD {
                    let gain = (st / sr) as f32;
                    let bias = (mt - mr * st / sr) as f32;
                    plane.assign(&cplane.mapv(|v| v * gain + bias));
                } else {
                    plane.fill(mt as f32);
                }
            }
        }
        Ok(self.decode_features(&feats.view()))
    }
}

fn check_strength(strength: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&strength) || !strength.is_finite() {
        return Err(Error::InvalidConfig {
            msg: format!("stylization strength {strength} outside [0, 1]"),
        });
    }
    Ok(())
}

/// Identifiers accepted by [`get_stylizer`].
pub const STYLIZER_IDS: [&str; 2] = ["identity", "featstat"];

/// Look up a stylizer by identifier.
pub fn get_stylizer(id: &str) -> Result<Box<dyn Stylizer>> {
    match id {
        "identity" => Ok(Box::new(IdentityStylizer)),
        "featstat" => Ok(Box::new(FeatureStatsStylizer::new())),
        other => Err(Error::UnregisteredStylizer {
            id: other.to_string(),
        }),
    }
}

/// Stylize one image with a registered stylizer.
pub fn stylize_image(
    stylizer_id: &str,
    content: &ArrayView3<f32>,
    style: &ArrayView3<f32>,
    strength: f32,
) -> Result<Array3<f32>> {
    get_stylizer(stylizer_id)?.stylize(content, style, strength)
}

/// Deterministic style assignment: images are processed in manifest
/// order and grouped into corpus-sized chunks; each chunk draws styles
/// uniformly without replacement (an independent shuffle per chunk), so
/// styles stay balanced to within one use.
pub fn style_assignment(n_images: usize, n_styles: usize, seed: u64) -> Vec<usize> {
    assert!(n_styles > 0, "empty style corpus");
    let mut out = Vec::with_capacity(n_images);
    let mut chunk = 0usize;
    while out.len() < n_images {
        let mut idx: Vec<usize> = (0..n_styles).collect();
        idx.shuffle(&mut seeded_rng(seed, &format!("styles/chunk/{chunk}")));
        for i in idx {
            if out.len() == n_images {
                break;
            }
            out.push(i);
        }
        chunk += 1;
    }
    out
}

/// One line of the append-only job log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobLogLine {
    pub image_id: String,
    pub style_id: String,
    /// `"ok"` or `"failed: <message>"`.
    pub status: String,
}

fn output_image_path(index: usize, record: &ImageRecord) -> PathBuf {
    let safe: String = record
        .image_id
        .chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() || matches!(ch, '.' | '_' | '-') {
                ch
            } else {
                '_'
            }
        })
        .collect();
    PathBuf::from("images").join(format!("{index:06}_{safe}.png"))
}

/// Images already completed according to the job log. A line only
/// counts if its output file still exists, so deleted outputs are
/// redone. Unparseable lines (e.g. a partial write from a crash) are
/// ignored.
fn completed_images(log_path: &Path, output_dir: &Path, source: &DatasetManifest) -> HashSet<String> {
    let mut produced: std::collections::HashMap<&str, PathBuf> = std::collections::HashMap::new();
    for (i, r) in source.records.iter().enumerate() {
        produced.insert(r.image_id.as_str(), output_image_path(i, r));
    }
    let mut done = HashSet::new();
    let Ok(file) = std::fs::File::open(log_path) else {
        return done;
    };
    for line in BufReader::new(file).lines().map_while(|l| l.ok()) {
        let Ok(entry) = serde_json::from_str::<JobLogLine>(&line) else {
            continue;
        };
        if entry.status == "ok" {
            if let Some(rel) = produced.get(entry.image_id.as_str()) {
                if output_dir.join(rel).is_file() {
                    done.insert(entry.image_id);
                }
            }
        }
    }
    done
}

/// Run a stylization job: one output image per source record, written
/// under `output_dir/images/`, plus `manifest.jsonl` and an append-only
/// `job_log.jsonl`.
///
/// The job is resumable: records logged as ok (with their output file
/// present) are skipped on a rerun. Per-image failures are logged and
/// counted; if any remain at the end the job returns
/// [`Error::StylizeJobFailed`] and writes no manifest. On success the
/// returned manifest equals the source except for image paths and a
/// `-s` suffix on the source tag.
pub fn stylize_dataset(job: &StylizationJob) -> Result<DatasetManifest> {
    check_strength(job.strength)?;
    let stylizer = get_stylizer(&job.stylizer_id)?;
    let records = &job.source.records;
    let n = records.len();
    if n == 0 {
        return Err(Error::EmptyManifest);
    }
    let assignment = style_assignment(n, job.styles.paths.len(), job.styles.sampling_seed);

    let images_dir = job.output_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let log_path = job.output_dir.join("job_log.jsonl");
    let done = completed_images(&log_path, &job.output_dir, &job.source);

    // Styles are decoded once up front; a bad style file fails the whole
    // job since it would poison its entire share of images.
    let styles: Vec<Array3<f32>> = job
        .styles
        .paths
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<_>>()?;

    let pending: Vec<usize> = (0..n)
        .filter(|&i| !done.contains(&records[i].image_id))
        .collect();

    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut failed = 0usize;

    // Chunked so the log grows as the job runs (resumability) while each
    // chunk's images are stylized in parallel. Log lines stay in
    // manifest order.
    for chunk in pending.chunks(16) {
        let results: Vec<Result<()>> = exec::map_indexed(chunk.len(), |j| {
            let i = chunk[j];
            let record = &records[i];
            let out_path = job.output_dir.join(output_image_path(i, record));
            let content = load_image(&job.source.resolve_path(record))?;
            let styled =
                stylizer.stylize(&content.view(), &styles[assignment[i]].view(), job.strength)?;
            save_image(&styled.view(), &out_path)
        });
        for (j, result) in results.into_iter().enumerate() {
            let i = chunk[j];
            let status = match result {
                Ok(()) => "ok".to_string(),
                Err(e) => {
                    failed += 1;
                    format!("failed: {e}")
                }
            };
            let entry = JobLogLine {
                image_id: records[i].image_id.clone(),
                style_id: job.styles.style_id(assignment[i]),
                status,
            };
            let line = serde_json::to_string(&entry).expect("log line serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
    }
    if failed > 0 {
        return Err(Error::StylizeJobFailed {
            failed,
            log: log_path,
        });
    }

    let mut out = job.source.clone();
    out.source_tag = format!("{}-s", job.source.source_tag);
    out.base_dir = job.output_dir.clone();
    for (i, record) in out.records.iter_mut().enumerate() {
        record.path = output_image_path(i, record);
    }
    // Geometry is preserved, so every bbox must still validate against
    // the recorded dimensions.
    for record in &out.records {
        for person in &record.persons {
            person
                .bbox
                .validated(&record.image_id, record.width, record.height)?;
        }
    }
    out.save(&job.output_dir.join("manifest.jsonl"))?;
    Ok(out)
}
