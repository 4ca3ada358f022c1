//! Training configuration: a flat `key = value` text format, defaults,
//! and a canonical hash.
//!
//! Every run serializes its fully resolved configuration next to its
//! run record, so experiments are self-describing even when most keys
//! were left at their defaults.

use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;

/// Learning-rate schedule across epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Step,
}

impl LrSchedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Step => "step",
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<LrSchedule> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "step" => Ok(LrSchedule::Step),
            other => Err(Error::InvalidConfig {
                msg: format!("unknown lr_schedule '{other}' (expected constant/step)"),
            }),
        }
    }
}

/// Where input normalization statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormSource {
    /// Estimate mean/std over the training images.
    Dataset,
    /// The fixed large-corpus photo statistics.
    Imagenet,
}

impl NormSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormSource::Dataset => "dataset",
            NormSource::Imagenet => "imagenet",
        }
    }
}

impl FromStr for NormSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<NormSource> {
        match s {
            "dataset" => Ok(NormSource::Dataset),
            "imagenet" => Ok(NormSource::Imagenet),
            other => Err(Error::InvalidConfig {
                msg: format!("unknown norm_stats '{other}' (expected dataset/imagenet)"),
            }),
        }
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Epoch interval of the step schedule.
    pub lr_step_every: usize,
    /// Multiplier applied at each step.
    pub lr_step_factor: f64,
    pub momentum: f64,
    /// Random flips and crop jitter on training samples. Turned off for
    /// pure-memorization runs (overfit oracles).
    pub augment: bool,
    pub seed: u64,
    pub norm_stats: NormSource,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            epochs: 25,
            batch_size: 32,
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Step,
            lr_step_every: 7,
            lr_step_factor: 0.1,
            momentum: 0.9,
            augment: true,
            seed: 0,
            norm_stats: NormSource::Dataset,
            train_manifest: PathBuf::new(),
            val_manifest: PathBuf::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig { msg });
        if self.epochs == 0 {
            return bad("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.lr_step_every == 0 {
            return bad("lr_step_every must be >= 1".to_string());
        }
        if !(self.lr_step_factor > 0.0) || !self.lr_step_factor.is_finite() {
            return bad(format!(
                "lr_step_factor {} must be positive",
                self.lr_step_factor
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.train_manifest.as_os_str().is_empty() {
            return bad("train_manifest is required".to_string());
        }
        if self.val_manifest.as_os_str().is_empty() {
            return bad("val_manifest is required".to_string());
        }
        Ok(())
    }

    /// Learning rate in effect for a 1-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Step => {
                let steps = (epoch - 1) / self.lr_step_every;
                self.learning_rate * self.lr_step_factor.powi(steps as i32)
            }
        }
    }

    /// Apply one `key = value` assignment (used by the file parser and
    /// by CLI overrides).
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::InvalidConfig {
                msg: format!("bad value '{value}' for key '{key}'"),
            })
        }
        match key {
            "body_backbone" => self.model.body_backbone = value.parse()?,
            "context_backbone" => self.model.context_backbone = value.parse()?,
            "context_pretraining" => self.model.context_pretraining = value.parse()?,
            "body_crop_side" => self.model.body_crop_side = num(key, value)?,
            "context_side" => self.model.context_side = num(key, value)?,
            "fusion_hidden" => self.model.fusion_hidden = num(key, value)?,
            "dropout" => self.model.dropout = num(key, value)?,
            "pretrained" => self.model.pretrained = num(key, value)?,
            "weights_dir" => self.model.weights_dir = Some(PathBuf::from(value)),
            "lambda_discrete" => self.weights.discrete = num(key, value)?,
            "lambda_continuous" => self.weights.continuous = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "lr_schedule" => self.lr_schedule = value.parse()?,
            "lr_step_every" => self.lr_step_every = num(key, value)?,
            "lr_step_factor" => self.lr_step_factor = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "norm_stats" => self.norm_stats = value.parse()?,
            "train_manifest" => self.train_manifest = PathBuf::from(value),
            "val_manifest" => self.val_manifest = PathBuf::from(value),
            other => {
                return Err(Error::InvalidConfig {
                    msg: format!("unknown config key '{other}'"),
                })
            }
        }
        Ok(())
    }

    /// All keys as `(key, value)` pairs; `weights_dir` appears only when
    /// set.
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("body_backbone", self.model.body_backbone.to_string()),
            ("context_backbone", self.model.context_backbone.to_string()),
            (
                "context_pretraining",
                self.model.context_pretraining.to_string(),
            ),
            ("body_crop_side", self.model.body_crop_side.to_string()),
            ("context_side", self.model.context_side.to_string()),
            ("fusion_hidden", self.model.fusion_hidden.to_string()),
            ("dropout", self.model.dropout.to_string()),
            ("pretrained", self.model.pretrained.to_string()),
        ];
        if let Some(dir) = &self.model.weights_dir {
            out.push(("weights_dir", dir.display().to_string()));
        }
        out.extend([
            ("lambda_discrete", self.weights.discrete.to_string()),
            ("lambda_continuous", self.weights.continuous.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("lr_schedule", self.lr_schedule.as_str().to_string()),
            ("lr_step_every", self.lr_step_every.to_string()),
            ("lr_step_factor", self.lr_step_factor.to_string()),
            ("momentum", self.momentum.to_string()),
            ("augment", self.augment.to_string()),
            ("seed", self.seed.to_string()),
            ("norm_stats", self.norm_stats.as_str().to_string()),
            (
                "train_manifest",
                self.train_manifest.display().to_string(),
            ),
            ("val_manifest", self.val_manifest.display().to_string()),
        ]);
        out
    }
}

/// Parse the flat `key = value` config format. `#` starts a comment,
/// blank lines are skipped, unknown and duplicate keys are rejected.
/// Unlisted keys keep their defaults; the two manifest paths have none
/// and must be present.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig {
                msg: format!("line {}: expected 'key = value', got '{line}'", lineno + 1),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(Error::InvalidConfig {
                msg: format!("line {}: duplicate key '{key}'", lineno + 1),
            });
        }
        seen.push(key.to_string());
        config.set_key(key, value)?;
    }
    config.validate()?;
    Ok(config)
}

/// Read and parse a config file.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_train_config(&text)
}

/// Serialize a config in the same flat format `parse_train_config`
/// reads.
pub fn serialize_train_config(config: &TrainConfig) -> String {
    let mut out = String::new();
    for (key, value) in config.pairs() {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    }
    out
}

/// Lexical path normalization: drops `.` components and redundant
/// separators without touching the filesystem, so `./a//b` and `a/b`
/// hash identically.
fn normalize_path(p: &str) -> String {
    let mut out = PathBuf::new();
    for c in Path::new(p).components() {
        match c {
            Component::CurDir => {}
            other => out.push(other.as_os_str()),
        }
    }
    out.display().to_string()
}

/// Hash of every semantically meaningful config field (hex, 64 chars).
/// Paths participate after lexical normalization.
pub fn config_hash(config: &TrainConfig) -> String {
    let mut pairs = config.pairs();
    for (key, value) in pairs.iter_mut() {
        if matches!(*key, "train_manifest" | "val_manifest" | "weights_dir") {
            *value = normalize_path(value);
        }
    }
    pairs.sort();
    let mut hasher = Sha256::new();
    for (key, value) in pairs {
        hasher.update(key.as_bytes());
        hasher.update(b"=");
        hasher.update(value.as_bytes());
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

/// Fallback hash for checkpoints that did not record their training
/// provenance: the model architecture fields alone.
pub fn model_config_hash(config: &ModelConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"model-only\n");
    hasher.update(serde_json::to_string(config).expect("config serializes"));
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Backbone, ContextPretraining};

    fn with_manifests() -> TrainConfig {
        TrainConfig {
            train_manifest: PathBuf::from("data/train.jsonl"),
            val_manifest: PathBuf::from("data/val.jsonl"),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_are_the_documented_ones() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs, 25);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.lr_schedule, LrSchedule::Step);
        assert_eq!(c.lr_step_every, 7);
        assert_eq!(c.lr_step_factor, 0.1);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.model.body_crop_side, 128);
        assert_eq!(c.model.context_side, 224);
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut c = with_manifests();
        c.model.body_backbone = Backbone::ResNet50;
        c.model.context_pretraining = ContextPretraining::Object;
        c.model.weights_dir = Some(PathBuf::from("w"));
        c.epochs = 3;
        c.seed = 17;
        c.norm_stats = NormSource::Imagenet;
        let back = parse_train_config(&serialize_train_config(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_train_config(
            "# comment\ntrain_manifest = t.jsonl\n\nval_manifest = v.jsonl # inline\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 25);
        assert_eq!(c.train_manifest, PathBuf::from("t.jsonl"));
        assert_eq!(c.val_manifest, PathBuf::from("v.jsonl"));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        for text in [
            "nonsense_key = 1\ntrain_manifest = t\nval_manifest = v\n",
            "epochs = 2\nepochs = 3\ntrain_manifest = t\nval_manifest = v\n",
            "epochs = banana\ntrain_manifest = t\nval_manifest = v\n",
            "just a line\n",
            "train_manifest = t\n", // missing val manifest
            "epochs = 0\ntrain_manifest = t\nval_manifest = v\n",
            "learning_rate = -1\ntrain_manifest = t\nval_manifest = v\n",
        ] {
            assert!(
                matches!(
                    parse_train_config(text).unwrap_err(),
                    Error::InvalidConfig { .. }
                ),
                "accepted: {text}"
            );
        }
    }

    #[test]
    fn step_schedule_decays_every_interval() {
        let mut c = with_manifests();
        c.learning_rate = 0.01;
        c.lr_step_every = 7;
        c.lr_step_factor = 0.1;
        assert_eq!(c.lr_at(1), 0.01);
        assert_eq!(c.lr_at(7), 0.01);
        assert!((c.lr_at(8) - 0.001).abs() < 1e-12);
        assert!((c.lr_at(15) - 0.0001).abs() < 1e-12);
        c.lr_schedule = LrSchedule::Constant;
        assert_eq!(c.lr_at(100), 0.01);
    }

    #[test]
    fn hash_tracks_semantic_changes_only() {
        let base = with_manifests();
        let h0 = config_hash(&base);
        assert_eq!(h0.len(), 64);
        assert_eq!(h0, config_hash(&base.clone()));

        // Path normalization does not change the hash.
        let mut renamed = base.clone();
        renamed.train_manifest = PathBuf::from("./data//train.jsonl");
        assert_eq!(h0, config_hash(&renamed));

        // Every semantic change does.
        let mut seen = vec![h0];
        let variants: Vec<TrainConfig> = vec![
            {
                let mut c = base.clone();
                c.model.body_backbone = Backbone::ResNet50;
                c
            },
            {
                let mut c = base.clone();
                c.model.context_pretraining = ContextPretraining::Object;
                c
            },
            {
                let mut c = base.clone();
                c.model.body_crop_side = 224;
                c
            },
            {
                let mut c = base.clone();
                c.weights.discrete = 0.7;
                c.weights.continuous = 0.3;
                c
            },
            {
                let mut c = base.clone();
                c.epochs = 24;
                c
            },
            {
                let mut c = base.clone();
                c.learning_rate = 0.02;
                c
            },
            {
                let mut c = base.clone();
                c.seed = 1;
                c
            },
            {
                let mut c = base.clone();
                c.augment = false;
                c
            },
            {
                let mut c = base.clone();
                c.train_manifest = PathBuf::from("data/train2.jsonl");
                c
            },
            {
                let mut c = base.clone();
                c.model.weights_dir = Some(PathBuf::from("w"));
                c
            },
        ];
        for v in variants {
            let h = config_hash(&v);
            assert!(!seen.contains(&h), "hash collision for {v:?}");
            seen.push(h);
        }
    }
}
