//! Training loop, evaluation, and experiment plumbing.
//!
//! [`train`] runs seeded mini-batch SGD over a dataset manifest, tracks
//! per-epoch losses and validation metrics, and keeps the checkpoint
//! with the best validation mean AP. [`evaluate_checkpoint`] reloads a
//! checkpoint and scores any manifest. [`ablate`](crate::harness::ablate)
//! wires grids of configs into comparison tables, and
//! [`synth`](crate::harness::synth) generates the procedural smoke
//! datasets the tests train on.

pub mod ablate;
mod config;
pub mod synth;

pub use config::{
    config_hash, load_train_config, model_config_hash, parse_train_config,
    serialize_train_config, LrSchedule, NormSource, TrainConfig,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::preprocess::{self, NormStats};
use crate::dataset::{parse_manifest, DatasetManifest, CATEGORY_COUNT};
use crate::error::{Error, Result};
use crate::losses;
use crate::metrics::{self, MetricsReport};
use crate::model::{build_model, EmotionModel};
use crate::nn::{zero_grad, Sgd};
use crate::{exec, seeded_rng};

/// One epoch's results inside a [`RunRecord`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochEntry {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_discrete_loss: f64,
    pub train_continuous_loss: f64,
    pub train_combined_loss: f64,
    pub val_mean_ap: f64,
    pub val_mean_mae: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

/// The complete, self-describing record of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    /// The fully resolved configuration, in the flat config format.
    pub config_text: String,
    pub epochs: Vec<EpochEntry>,
    pub best_epoch: usize,
    pub best_val_mean_ap: f64,
    pub checkpoint: PathBuf,
    pub total_seconds: f64,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RunRecord> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
            msg: format!("bad run record {}: {e}", path.display()),
        })
    }
}

/// A manifest decoded into model-ready tensors and targets, one entry
/// per annotated person, in manifest order.
pub struct PreparedDataset {
    pub source_tag: String,
    pub categories: Vec<String>,
    /// Normalized `(body, context)` input pairs.
    pub inputs: Vec<(Array3<f32>, Array3<f32>)>,
    /// Multi-hot targets, flat `[n * 26]`.
    pub disc_targets: Vec<f64>,
    /// Affect targets, flat `[n * 3]`.
    pub vad_targets: Vec<f64>,
    /// Labeled category indices per person (first = predominant).
    pub person_categories: Vec<Vec<usize>>,
    /// Persons labeled with each category.
    pub category_counts: Vec<u64>,
}

impl PreparedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Decode every image once and derive all per-person tensors.
pub fn prepare_dataset(
    manifest: &DatasetManifest,
    body_side: usize,
    context_side: usize,
    norm: &NormStats,
) -> Result<PreparedDataset> {
    let records = &manifest.records;
    // Per-record decode + preprocess, parallel over records.
    let per_record: Vec<Vec<(Array3<f32>, Array3<f32>)>> =
        exec::try_map_indexed(records.len(), |i| {
            let record = &records[i];
            let image = preprocess::load_image(&manifest.resolve_path(record))?;
            Ok(record
                .persons
                .iter()
                .map(|p| {
                    preprocess::person_inputs_from(
                        &image.view(),
                        p,
                        body_side,
                        context_side,
                        norm,
                    )
                })
                .collect())
        })?;

    let k = manifest.categories.len();
    let mut inputs = Vec::new();
    let mut disc_targets = Vec::new();
    let mut vad_targets = Vec::new();
    let mut person_categories = Vec::new();
    let mut category_counts = vec![0u64; k];
    for (record, pairs) in records.iter().zip(per_record) {
        for (person, pair) in record.persons.iter().zip(pairs) {
            inputs.push(pair);
            let mut row = vec![0.0f64; k];
            for &c in &person.categories {
                row[c] = 1.0;
                category_counts[c] += 1;
            }
            disc_targets.extend(row);
            vad_targets.extend(person.vad.as_array());
            person_categories.push(person.categories.clone());
        }
    }
    if inputs.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(PreparedDataset {
        source_tag: manifest.source_tag.clone(),
        categories: manifest.categories.clone(),
        inputs,
        disc_targets,
        vad_targets,
        person_categories,
        category_counts,
    })
}

/// Estimate per-channel normalization statistics over a manifest's
/// images.
pub fn estimate_norm(manifest: &DatasetManifest) -> Result<NormStats> {
    let images: Vec<Array3<f32>> = exec::try_map_indexed(manifest.records.len(), |i| {
        preprocess::load_image(&manifest.resolve_path(&manifest.records[i]))
    })?;
    Ok(NormStats::estimate(images.iter().map(|t| t.view())))
}

fn stack_pairs(
    inputs: &[(Array3<f32>, Array3<f32>)],
    indices: &[usize],
) -> (Array4<f32>, Array4<f32>) {
    let (bc, bh, bw) = inputs[indices[0]].0.dim();
    let (cc, ch, cw) = inputs[indices[0]].1.dim();
    let mut bodies = Array4::<f32>::zeros((indices.len(), bc, bh, bw));
    let mut contexts = Array4::<f32>::zeros((indices.len(), cc, ch, cw));
    for (j, &i) in indices.iter().enumerate() {
        bodies.index_axis_mut(Axis(0), j).assign(&inputs[i].0);
        contexts.index_axis_mut(Axis(0), j).assign(&inputs[i].1);
    }
    (bodies, contexts)
}

/// Batched inference over a prepared dataset: flat `[n * 26]` scores and
/// `[n * 3]` affect predictions as f64. Batches of 32 run in parallel
/// (the model is read-only here) and are concatenated in index order.
fn infer_all(model: &EmotionModel, prep: &PreparedDataset) -> (Vec<f64>, Vec<f64>) {
    let n = prep.len();
    let n_batches = n.div_ceil(32);
    let parts = exec::map_indexed(n_batches, |bi| {
        let indices: Vec<usize> = (bi * 32..((bi + 1) * 32).min(n)).collect();
        let (bodies, contexts) = stack_pairs(&prep.inputs, &indices);
        model.infer(&bodies, &contexts)
    });
    let mut scores = Vec::with_capacity(n * CATEGORY_COUNT);
    let mut vads = Vec::with_capacity(n * 3);
    for (s, v) in parts {
        scores.extend(s.iter().map(|&x| x as f64));
        vads.extend(v.iter().map(|&x| x as f64));
    }
    (scores, vads)
}

/// Evaluation options.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Count only each person's predominant category as a positive.
    pub predominant_only: bool,
}

/// Score a model over prepared inputs.
pub fn evaluate_prepared(
    model: &EmotionModel,
    prep: &PreparedDataset,
    opts: EvalOptions,
    config_hash: &str,
) -> Result<MetricsReport> {
    let k = prep.categories.len();
    let (scores, vads) = infer_all(model, prep);
    let mut labels = vec![false; prep.len() * k];
    for (i, cats) in prep.person_categories.iter().enumerate() {
        if opts.predominant_only {
            labels[i * k + cats[0]] = true;
        } else {
            for &c in cats {
                labels[i * k + c] = true;
            }
        }
    }
    let discrete = metrics::evaluate_discrete(&scores, &labels, &prep.categories)?;
    let vad = metrics::evaluate_vad(&vads, &prep.vad_targets)?;
    Ok(MetricsReport {
        source_tag: prep.source_tag.clone(),
        config_hash: config_hash.to_string(),
        predominant_only: opts.predominant_only,
        instances: prep.len(),
        discrete,
        vad,
    })
}

fn check_categories(model: &EmotionModel, manifest: &DatasetManifest) -> Result<()> {
    if model.categories != manifest.categories {
        return Err(Error::CategorySetMismatch {
            detail: format!(
                "checkpoint has {} categories, manifest '{}' has {}",
                model.categories.len(),
                manifest.source_tag,
                manifest.categories.len()
            ),
        });
    }
    Ok(())
}

fn checkpoint_hash(model: &EmotionModel) -> String {
    model
        .train_meta
        .get("config_hash")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
        .unwrap_or_else(|| model_config_hash(&model.config))
}

/// Evaluate an in-memory model on a manifest.
pub fn evaluate_model(
    model: &EmotionModel,
    manifest: &DatasetManifest,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    check_categories(model, manifest)?;
    let prep = prepare_dataset(
        manifest,
        model.config.body_crop_side,
        model.config.context_side,
        &model.norm,
    )?;
    evaluate_prepared(model, &prep, opts, &checkpoint_hash(model))
}

/// Load a checkpoint and evaluate it on a manifest file.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    manifest_path: &Path,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    let model = EmotionModel::load_checkpoint(checkpoint)?;
    let manifest = parse_manifest(manifest_path)?;
    evaluate_model(&model, &manifest, opts)
}

/// Train a model according to `config`, writing into `out_dir`:
/// `config.txt` (the resolved configuration), `best.ckpt` (highest
/// validation mean AP) and `run_record.json`. Returns the checkpoint
/// path and the record.
///
/// Fully seeded: initialization, epoch data order and per-sample
/// augmentation all derive from `config.seed`, so reruns reproduce the
/// same losses up to floating-point noise.
pub fn train(config: &TrainConfig, out_dir: &Path) -> Result<(PathBuf, RunRecord)> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let run_start = Instant::now();
    let hash = config_hash(config);
    let config_text = serialize_train_config(config);
    std::fs::write(out_dir.join("config.txt"), &config_text)
        .map_err(|e| Error::io(out_dir, e))?;

    let train_manifest = parse_manifest(&config.train_manifest)?;
    let val_manifest = parse_manifest(&config.val_manifest)?;
    for m in [&train_manifest, &val_manifest] {
        if !m.is_canonical_categories() {
            return Err(Error::CategorySetMismatch {
                detail: format!(
                    "training requires the canonical {CATEGORY_COUNT} categories; manifest '{}' defines {}",
                    m.source_tag,
                    m.categories.len()
                ),
            });
        }
    }

    let norm = match config.norm_stats {
        NormSource::Imagenet => NormStats::imagenet(),
        NormSource::Dataset => estimate_norm(&train_manifest)?,
    };
    let (body_side, context_side) = (config.model.body_crop_side, config.model.context_side);
    let train_prep = prepare_dataset(&train_manifest, body_side, context_side, &norm)?;
    let val_prep = prepare_dataset(&val_manifest, body_side, context_side, &norm)?;
    let weights = losses::make_category_weights(&train_prep.category_counts)?;

    let mut model = build_model(&config.model, config.seed)?;
    model.norm = norm;

    let n = train_prep.len();
    let mut order: Vec<usize> = (0..n).collect();
    let ckpt_path = out_dir.join("best.ckpt");
    let mut entries: Vec<EpochEntry> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;

    log::info!(
        "training {} persons for {} epochs (batch {}, seed {})",
        n,
        config.epochs,
        config.batch_size,
        config.seed
    );

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        let lr = config.lr_at(epoch);
        let sgd = Sgd {
            lr: lr as f32,
            momentum: config.momentum as f32,
        };
        order.shuffle(&mut seeded_rng(config.seed, &format!("order/{epoch}")));

        let mut sum_disc = 0.0;
        let mut sum_cont = 0.0;
        let mut sum_comb = 0.0;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let bsz = batch.len();
            // Augmentation keys off the sample's dataset index, so the
            // transform a sample gets is independent of batching.
            let (bc, bh, bw) = train_prep.inputs[batch[0]].0.dim();
            let (cc, ch, cw) = train_prep.inputs[batch[0]].1.dim();
            let mut bodies = Array4::<f32>::zeros((bsz, bc, bh, bw));
            let mut contexts = Array4::<f32>::zeros((bsz, cc, ch, cw));
            let mut td = Vec::with_capacity(bsz * CATEGORY_COUNT);
            let mut tv = Vec::with_capacity(bsz * 3);
            for (j, &i) in batch.iter().enumerate() {
                let (mut body, mut context) = train_prep.inputs[i].clone();
                if config.augment {
                    preprocess::augment(
                        &mut body,
                        &mut context,
                        preprocess::augment_seed(config.seed, epoch, i),
                    );
                }
                bodies.index_axis_mut(Axis(0), j).assign(&body);
                contexts.index_axis_mut(Axis(0), j).assign(&context);
                td.extend_from_slice(
                    &train_prep.disc_targets[i * CATEGORY_COUNT..(i + 1) * CATEGORY_COUNT],
                );
                tv.extend_from_slice(&train_prep.vad_targets[i * 3..(i + 1) * 3]);
            }

            let (scores, vads) = model.forward_train(&bodies, &contexts);
            let pd: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
            let pc: Vec<f64> = vads.iter().map(|&v| v as f64).collect();

            let comb = losses::combined_loss(&pd, &td, &weights, &pc, &tv, config.weights)?;
            if !comb.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_index,
                });
            }
            let disc = losses::discrete_loss(&pd, &td, &weights)?;
            let cont = losses::continuous_loss(&pc, &tv)?;
            sum_disc += disc * bsz as f64;
            sum_cont += cont * bsz as f64;
            sum_comb += comb * bsz as f64;

            let (gd, gc) =
                losses::combined_loss_grad(&pd, &td, &weights, &pc, &tv, config.weights)?;
            let gd32 = Array2::from_shape_vec(
                (bsz, CATEGORY_COUNT),
                gd.into_iter().map(|v| v as f32).collect(),
            )
            .expect("gradient shape");
            let gc32 =
                Array2::from_shape_vec((bsz, 3), gc.into_iter().map(|v| v as f32).collect())
                    .expect("gradient shape");
            model.backward(&gd32, &gc32);
            sgd.step(&mut model);
            zero_grad(&mut model);
        }

        let val_report = evaluate_prepared(&model, &val_prep, EvalOptions::default(), &hash)?;
        let entry = EpochEntry {
            epoch,
            train_discrete_loss: sum_disc / n as f64,
            train_continuous_loss: sum_cont / n as f64,
            train_combined_loss: sum_comb / n as f64,
            val_mean_ap: val_report.discrete.mean_ap,
            val_mean_mae: val_report.vad.mean_mae,
            learning_rate: lr,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}: loss {:.5} (disc {:.5}, cont {:.5}), val mAP {:.4}, val MAE {:.4}",
            epoch,
            entry.train_combined_loss,
            entry.train_discrete_loss,
            entry.train_continuous_loss,
            entry.val_mean_ap,
            entry.val_mean_mae
        );

        if best.map_or(true, |(_, map)| entry.val_mean_ap > map) {
            best = Some((epoch, entry.val_mean_ap));
            model.train_meta = serde_json::json!({
                "config_hash": hash,
                "epoch": epoch,
                "val_mean_ap": entry.val_mean_ap,
            });
            model.save_checkpoint(&ckpt_path)?;
        }
        entries.push(entry);
    }

    let (best_epoch, best_val_mean_ap) = best.expect("at least one epoch ran");
    let record = RunRecord {
        config_hash: hash,
        config_text,
        epochs: entries,
        best_epoch,
        best_val_mean_ap,
        checkpoint: ckpt_path.clone(),
        total_seconds: run_start.elapsed().as_secs_f64(),
    };
    record.save(&out_dir.join("run_record.json"))?;
    Ok((ckpt_path, record))
}
