//! Image loading and tensor preprocessing.
//!
//! Images become `[3, H, W]` f32 tensors with values in `[0, 1]`. The two
//! network inputs are produced per person: a body tensor resampled from
//! the annotated box and a context tensor resampled from the whole image.
//! Resampling is bilinear with half-pixel centers, so cropping a
//! mirrored image with a mirrored box yields exactly the mirrored crop.

use std::path::Path;

use ndarray::{Array3, ArrayView3};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoundingBox, DatasetManifest, ImageRecord, PersonAnnotation};
use crate::error::{Error, Result};

/// Input sides the shipped configurations use. Other values work but log
/// a warning, since pretrained weights assume these.
pub const SUPPORTED_SIDES: [usize; 2] = [128, 224];

/// Per-channel normalization statistics applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormStats {
    /// The widely used large-corpus photo statistics, the fallback when a
    /// dataset is too small to estimate its own.
    pub fn imagenet() -> NormStats {
        NormStats {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    /// Estimate statistics from tensors (mean and population std per channel).
    pub fn estimate<'a>(tensors: impl IntoIterator<Item = ArrayView3<'a, f32>>) -> NormStats {
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut count = 0u64;
        for t in tensors {
            for c in 0..3 {
                for &v in t.index_axis(ndarray::Axis(0), c).iter() {
                    sum[c] += v as f64;
                    sum_sq[c] += (v as f64) * (v as f64);
                }
            }
            count += (t.shape()[1] * t.shape()[2]) as u64;
        }
        let n = count.max(1) as f64;
        let mut mean = [0.0f32; 3];
        let mut std = [0.0f32; 3];
        for c in 0..3 {
            let m = sum[c] / n;
            let var = (sum_sq[c] / n - m * m).max(0.0);
            mean[c] = m as f32;
            std[c] = (var.sqrt().max(1e-6)) as f32;
        }
        NormStats { mean, std }
    }
}

/// Decode an image file into a `[3, H, W]` tensor scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut out = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Encode a `[3, H, W]` tensor in `[0, 1]` as a PNG file.
pub fn save_image(tensor: &ArrayView3<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = (tensor.shape()[0], tensor.shape()[1], tensor.shape()[2]);
    if c != 3 {
        return Err(Error::ShapeMismatch {
            context: "save_image",
            expected: "[3, H, W]".to_string(),
            actual: format!("{:?}", tensor.shape()),
        });
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|ch| {
                (tensor[[ch, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    buf.save(path).map_err(|e| Error::ImageEncode {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Bilinear sample of one channel at fractional coordinates, clamped to
/// the image bounds.
#[inline]
fn sample_bilinear(ch: &ArrayView3<f32>, c: usize, y: f64, x: f64) -> f32 {
    let h = ch.shape()[1];
    let w = ch.shape()[2];
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = (y - y0 as f64) as f32;
    let fx = (x - x0 as f64) as f32;
    let v00 = ch[[c, y0, x0]];
    let v01 = ch[[c, y0, x1]];
    let v10 = ch[[c, y1, x0]];
    let v11 = ch[[c, y1, x1]];
    let top = v00 + (v01 - v00) * fx;
    let bot = v10 + (v11 - v10) * fx;
    top + (bot - top) * fy
}

/// Resample the region `bbox` of `src` to `out_h x out_w`. Output pixel
/// centers map to source coordinates with the half-pixel convention:
/// output pixel `(oy, ox)` samples the source at
/// `y = y1 + (oy + 0.5) * (y2 - y1) / out_h - 0.5` (and likewise in x).
pub fn crop_bilinear(
    src: &ArrayView3<f32>,
    bbox: &BoundingBox,
    out_h: usize,
    out_w: usize,
) -> Array3<f32> {
    assert!(out_h > 0 && out_w > 0, "empty output");
    let channels = src.shape()[0];
    let mut out = Array3::<f32>::zeros((channels, out_h, out_w));
    let sy = bbox.height() / out_h as f64;
    let sx = bbox.width() / out_w as f64;
    for c in 0..channels {
        for oy in 0..out_h {
            let y = bbox.y1 + (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..out_w {
                let x = bbox.x1 + (ox as f64 + 0.5) * sx - 0.5;
                out[[c, oy, ox]] = sample_bilinear(src, c, y, x);
            }
        }
    }
    out
}

/// Resample a whole image to `out_h x out_w`.
pub fn bilinear_resize(src: &ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let full = BoundingBox::new(0.0, 0.0, src.shape()[2] as f64, src.shape()[1] as f64);
    crop_bilinear(src, &full, out_h, out_w)
}

/// Mirror a `[C, H, W]` tensor left-right.
pub fn flip_horizontal(t: &ArrayView3<f32>) -> Array3<f32> {
    let mut out = t.to_owned();
    out.invert_axis(ndarray::Axis(2));
    out
}

/// Normalize in place: `(v - mean[c]) / std[c]` per channel.
pub fn normalize(t: &mut Array3<f32>, stats: &NormStats) {
    for c in 0..3 {
        let m = stats.mean[c];
        let s = stats.std[c];
        t.index_axis_mut(ndarray::Axis(0), c)
            .mapv_inplace(|v| (v - m) / s);
    }
}

fn warn_unusual_side(side: usize, what: &str) {
    // Once per process: this runs once per person otherwise.
    static WARNED: std::sync::Once = std::sync::Once::new();
    if !SUPPORTED_SIDES.contains(&side) {
        WARNED.call_once(|| {
            log::warn!("{what} side {side} is nonstandard (expected one of {SUPPORTED_SIDES:?})");
        });
    }
}

/// Crop a person's body box from a decoded image and resample it to
/// `side x side`. No normalization.
pub fn extract_body_crop(
    image: &ArrayView3<f32>,
    person: &PersonAnnotation,
    side: usize,
) -> Array3<f32> {
    warn_unusual_side(side, "body crop");
    crop_bilinear(image, &person.bbox, side, side)
}

/// Resample the full image to `side x side` for the scene stream.
pub fn extract_context(image: &ArrayView3<f32>, side: usize) -> Array3<f32> {
    warn_unusual_side(side, "context");
    bilinear_resize(image, side, side)
}

/// Load a record's image and produce the normalized `(body, context)`
/// input pair for one annotated person.
pub fn person_inputs(
    manifest: &DatasetManifest,
    record: &ImageRecord,
    person: &PersonAnnotation,
    body_side: usize,
    context_side: usize,
    stats: &NormStats,
) -> Result<(Array3<f32>, Array3<f32>)> {
    let image = load_image(&manifest.resolve_path(record))?;
    Ok(person_inputs_from(
        &image.view(),
        person,
        body_side,
        context_side,
        stats,
    ))
}

/// As [`person_inputs`], from an already decoded image.
pub fn person_inputs_from(
    image: &ArrayView3<f32>,
    person: &PersonAnnotation,
    body_side: usize,
    context_side: usize,
    stats: &NormStats,
) -> (Array3<f32>, Array3<f32>) {
    let mut body = extract_body_crop(image, person, body_side);
    let mut context = extract_context(image, context_side);
    normalize(&mut body, stats);
    normalize(&mut context, stats);
    (body, context)
}

/// The random transform applied to one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Per-channel multiplicative jitter.
    pub scale: [f32; 3],
    /// Per-channel additive jitter.
    pub shift: [f32; 3],
}

/// Deterministic augmentation: the same seed always produces the same
/// transform. Both tensors share one transform so body and context stay
/// consistent (a mirrored body inside an unmirrored scene would lie).
pub fn augment(
    body: &mut Array3<f32>,
    context: &mut Array3<f32>,
    seed: u64,
) -> AugmentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.gen_bool(0.5);
    let scale_dist = Uniform::new_inclusive(0.92f32, 1.08f32);
    let shift_dist = Uniform::new_inclusive(-0.06f32, 0.06f32);
    let scale = [0; 3].map(|_| scale_dist.sample(&mut rng));
    let shift = [0; 3].map(|_| shift_dist.sample(&mut rng));
    let params = AugmentParams { flip, scale, shift };
    for t in [body, context] {
        if flip {
            t.invert_axis(ndarray::Axis(2));
        }
        for c in 0..3 {
            let (s, b) = (scale[c], shift[c]);
            t.index_axis_mut(ndarray::Axis(0), c)
                .mapv_inplace(|v| v * s + b);
        }
    }
    params
}

/// Derive the augmentation seed for one sample of one epoch from the run
/// seed, so reordering work never changes the transform a sample gets.
pub fn augment_seed(run_seed: u64, epoch: usize, sample_index: usize) -> u64 {
    let mut rng = crate::seeded_rng(run_seed, &format!("augment/{epoch}/{sample_index}"));
    rng.next_u64()
}
