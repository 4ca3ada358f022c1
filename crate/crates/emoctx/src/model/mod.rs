//! The two-branch emotion recognition model.
//!
//! One trunk encodes the person's body crop, a second trunk encodes the
//! whole scene, and a fusion head maps the concatenated features to 26
//! category scores and 3 continuous affect values. The branches are
//! independently seeded: changing how the context branch is initialized
//! (or which pretrained weights it loads) never perturbs the body
//! branch, which keeps ablation comparisons honest.

pub mod weights;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Array4, Axis, Ix2};
use serde::{Deserialize, Serialize};

use crate::ckpt::Container;
use crate::dataset::preprocess::{self, NormStats};
use crate::dataset::{DatasetManifest, ImageRecord, PersonAnnotation, CATEGORY_COUNT};
use crate::error::{Error, Result};
use crate::nn::{join, Dropout, Linear, Relu, ResNet, Visit, Visited};
use crate::seeded_rng;

/// Trunk depth for either branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    ResNet18,
    ResNet50,
}

impl Backbone {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backbone::ResNet18 => "resnet18",
            Backbone::ResNet50 => "resnet50",
        }
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Backbone> {
        match s {
            "resnet18" => Ok(Backbone::ResNet18),
            "resnet50" => Ok(Backbone::ResNet50),
            other => Err(Error::UnknownBackbone {
                name: other.to_string(),
            }),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which corpus the context trunk's pretrained weights come from:
/// scene-centric imagery (the default) or object-centric imagery (the
/// ablation that measures how much scene-aware features matter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextPretraining {
    Scene,
    Object,
}

impl ContextPretraining {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContextPretraining::Scene => "scene",
            ContextPretraining::Object => "object",
        }
    }
}

impl FromStr for ContextPretraining {
    type Err = Error;

    fn from_str(s: &str) -> Result<ContextPretraining> {
        match s {
            "scene" => Ok(ContextPretraining::Scene),
            "object" => Ok(ContextPretraining::Object),
            other => Err(Error::InvalidConfig {
                msg: format!("unknown context pretraining '{other}' (expected scene/object)"),
            }),
        }
    }
}

impl std::fmt::Display for ContextPretraining {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything needed to rebuild the network architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub body_backbone: Backbone,
    pub context_backbone: Backbone,
    pub context_pretraining: ContextPretraining,
    /// Side length the body crop is resampled to.
    pub body_crop_side: usize,
    /// Side length the scene image is resampled to.
    pub context_side: usize,
    /// Width of the fusion layer.
    pub fusion_hidden: usize,
    /// Drop probability in the fusion head.
    pub dropout: f64,
    /// Load pretrained trunk weights from `weights_dir` at build time.
    pub pretrained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_dir: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            body_backbone: Backbone::ResNet18,
            context_backbone: Backbone::ResNet18,
            context_pretraining: ContextPretraining::Scene,
            body_crop_side: 128,
            context_side: 224,
            fusion_hidden: 256,
            dropout: 0.5,
            pretrained: false,
            weights_dir: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.body_crop_side == 0 || self.context_side == 0 {
            return Err(Error::InvalidConfig {
                msg: "input sides must be positive".to_string(),
            });
        }
        if self.fusion_hidden == 0 {
            return Err(Error::InvalidConfig {
                msg: "fusion width must be positive".to_string(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig {
                msg: format!("dropout {} outside [0, 1)", self.dropout),
            });
        }
        Ok(())
    }

    fn weights_dir(&self) -> PathBuf {
        self.weights_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("weights"))
    }
}

fn build_trunk(backbone: Backbone, rng: &mut rand_chacha::ChaCha8Rng) -> ResNet {
    match backbone {
        Backbone::ResNet18 => ResNet::resnet18(rng),
        Backbone::ResNet50 => ResNet::resnet50(rng),
    }
}

/// Fusion of the two feature vectors into both prediction heads.
#[derive(Debug, Clone)]
struct FusionHead {
    fc1: Linear,
    relu: Relu<Ix2>,
    dropout: Dropout,
    disc: Linear,
    cont: Linear,
    body_dim: usize,
}

impl FusionHead {
    fn new(
        body_dim: usize,
        context_dim: usize,
        hidden: usize,
        dropout: f64,
        seed: u64,
    ) -> FusionHead {
        let mut rng = seeded_rng(seed, "init/fusion");
        FusionHead {
            fc1: Linear::new(body_dim + context_dim, hidden, &mut rng),
            relu: Relu::new(),
            dropout: Dropout::new(dropout, seeded_rng(seed, "dropout")),
            disc: Linear::new(hidden, CATEGORY_COUNT, &mut rng),
            cont: Linear::new(hidden, 3, &mut rng),
            body_dim,
        }
    }

    fn infer(&self, fused: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        let h = self.dropout.infer(&self.relu.infer(&self.fc1.infer(fused)));
        (self.disc.infer(&h), self.cont.infer(&h))
    }

    fn forward_train(&mut self, fused: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        let h = self.fc1.forward_train(fused);
        let h = self.relu.forward_train(&h);
        let h = self.dropout.forward_train(&h);
        (self.disc.forward_train(&h), self.cont.forward_train(&h))
    }

    /// Returns the gradients for the (body, context) feature halves.
    fn backward(
        &mut self,
        g_disc: &Array2<f32>,
        g_cont: &Array2<f32>,
    ) -> (Array2<f32>, Array2<f32>) {
        let gh = self.disc.backward(g_disc) + self.cont.backward(g_cont);
        let gh = self.dropout.backward(&gh);
        let gh = self.relu.backward(&gh);
        let gf = self.fc1.backward(&gh);
        let gb = gf.slice(s![.., ..self.body_dim]).to_owned();
        let gc = gf.slice(s![.., self.body_dim..]).to_owned();
        (gb, gc)
    }
}

impl Visit for FusionHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(Visited<'_>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.disc.visit(&join(prefix, "disc"), f);
        self.cont.visit(&join(prefix, "cont"), f);
    }
}

/// Checkpoint container kind for full models.
pub const MODEL_KIND: &str = "model";

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    categories: Vec<String>,
    norm: NormStats,
    /// Free-form training provenance (config hash, best epoch, ...).
    #[serde(default)]
    train: serde_json::Value,
}

/// The assembled two-branch model.
#[derive(Debug, Clone)]
pub struct EmotionModel {
    pub config: ModelConfig,
    pub categories: Vec<String>,
    pub norm: NormStats,
    /// Training provenance carried through checkpoints; `Null` for fresh
    /// models.
    pub train_meta: serde_json::Value,
    body: ResNet,
    context: ResNet,
    fusion: FusionHead,
}

/// Build a model from its configuration. Branch initializations are
/// derived independently from the seed, so switching the context
/// pretraining scheme changes context-branch tensors and nothing else.
/// With `pretrained` set, trunk weights load from the weights directory
/// (see [`weights`]).
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<EmotionModel> {
    config.validate()?;
    let mut model = build_random(config, seed);
    if config.pretrained {
        let dir = config.weights_dir();
        weights::load_trunk(
            &mut model.body,
            config.body_backbone,
            ContextPretraining::Object,
            &dir,
        )?;
        weights::load_trunk(
            &mut model.context,
            config.context_backbone,
            config.context_pretraining,
            &dir,
        )?;
    }
    Ok(model)
}

fn build_random(config: &ModelConfig, seed: u64) -> EmotionModel {
    let mut body_rng = seeded_rng(seed, &format!("init/body/{}", config.body_backbone));
    let body = build_trunk(config.body_backbone, &mut body_rng);
    let mut context_rng = seeded_rng(
        seed,
        &format!(
            "init/context/{}/{}",
            config.context_backbone, config.context_pretraining
        ),
    );
    let context = build_trunk(config.context_backbone, &mut context_rng);
    let fusion = FusionHead::new(
        body.feature_dim,
        context.feature_dim,
        config.fusion_hidden,
        config.dropout,
        seed,
    );
    EmotionModel {
        config: config.clone(),
        categories: crate::dataset::canonical_categories(),
        norm: NormStats::imagenet(),
        train_meta: serde_json::Value::Null,
        body,
        context,
        fusion,
    }
}

impl EmotionModel {
    /// Run both branches and the fusion head: `[B, 3, hb, wb]` body crops
    /// and `[B, 3, hc, wc]` scenes to `([B, 26], [B, 3])`.
    pub fn infer(&self, body: &Array4<f32>, context: &Array4<f32>) -> (Array2<f32>, Array2<f32>) {
        let fb = self.body.infer(body);
        let fc = self.context.infer(context);
        self.fusion.infer(&concat_features(&fb, &fc))
    }

    pub fn forward_train(
        &mut self,
        body: &Array4<f32>,
        context: &Array4<f32>,
    ) -> (Array2<f32>, Array2<f32>) {
        let fb = self.body.forward_train(body);
        let fc = self.context.forward_train(context);
        self.fusion.forward_train(&concat_features(&fb, &fc))
    }

    /// Backpropagate head gradients through both branches. Input-image
    /// gradients are discarded.
    pub fn backward(&mut self, g_disc: &Array2<f32>, g_cont: &Array2<f32>) {
        let (gb, gc) = self.fusion.backward(g_disc, g_cont);
        let _ = self.body.backward(&gb);
        let _ = self.context.backward(&gc);
    }

    /// Re-seed the fusion dropout stream (used when resuming training).
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.fusion.dropout.reseed(seeded_rng(seed, "dropout"));
    }

    /// Score one annotated person from an image on disk.
    pub fn predict_person(
        &self,
        manifest: &DatasetManifest,
        record: &ImageRecord,
        person: &PersonAnnotation,
    ) -> Result<Prediction> {
        let (body, context) = preprocess::person_inputs(
            manifest,
            record,
            person,
            self.config.body_crop_side,
            self.config.context_side,
            &self.norm,
        )?;
        Ok(self.predict_prepared(&[(body, context)]).remove(0))
    }

    /// Score already preprocessed `(body, context)` input pairs as one
    /// batch.
    pub fn predict_prepared(&self, pairs: &[(Array3<f32>, Array3<f32>)]) -> Vec<Prediction> {
        let (scores, vads) = self.infer(&stack3(pairs.iter().map(|p| &p.0)), &stack3(pairs.iter().map(|p| &p.1)));
        (0..pairs.len())
            .map(|i| {
                let s: Vec<f32> = scores.row(i).to_vec();
                let mut ranked: Vec<(String, f32)> = self
                    .categories
                    .iter()
                    .cloned()
                    .zip(s.iter().copied())
                    .collect();
                ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
                Prediction {
                    scores: s,
                    vad: [vads[[i, 0]], vads[[i, 1]], vads[[i, 2]]],
                    ranked_categories: ranked,
                }
            })
            .collect()
    }

    /// Serialize configuration, category list, normalization statistics
    /// and every tensor (including running statistics).
    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let meta = ModelMeta {
            config: self.config.clone(),
            categories: self.categories.clone(),
            norm: self.norm.clone(),
            train: self.train_meta.clone(),
        };
        let mut container = Container::new(MODEL_KIND);
        container.meta = serde_json::to_value(&meta).expect("meta serializes");
        self.visit("", &mut |v| {
            container.push(
                &v.name,
                v.value.shape().to_vec(),
                v.value.iter().copied().collect(),
            );
        });
        container.save(path)
    }

    /// Rebuild a model from a checkpoint written by
    /// [`EmotionModel::save_checkpoint`].
    pub fn load_checkpoint(path: &Path) -> Result<EmotionModel> {
        let container = Container::load(path)?;
        Self::from_container(&container, path)
    }

    pub fn from_container(container: &Container, origin: &Path) -> Result<EmotionModel> {
        let bad = |msg: String| Error::BadCheckpoint {
            path: origin.to_path_buf(),
            msg,
        };
        if container.kind != MODEL_KIND {
            return Err(bad(format!(
                "container kind '{}' is not a model",
                container.kind
            )));
        }
        let meta: ModelMeta = serde_json::from_value(container.meta.clone())
            .map_err(|e| bad(format!("bad model metadata: {e}")))?;
        let mut model = build_random(&meta.config, 0);
        model.categories = meta.categories;
        model.norm = meta.norm;
        model.train_meta = meta.train;

        let mut expected = 0usize;
        let mut problem: Option<String> = None;
        model.visit("", &mut |v| {
            expected += 1;
            if problem.is_some() {
                return;
            }
            match container.get(&v.name) {
                None => problem = Some(format!("missing tensor '{}'", v.name)),
                Some(t) if t.shape != v.value.shape() => {
                    problem = Some(format!(
                        "tensor '{}' has shape {:?}, expected {:?}",
                        v.name,
                        t.shape,
                        v.value.shape()
                    ));
                }
                Some(t) => {
                    for (dst, &src) in v.value.iter_mut().zip(&t.data) {
                        *dst = src;
                    }
                }
            }
        });
        if let Some(msg) = problem {
            return Err(bad(msg));
        }
        if container.tensors().len() != expected {
            return Err(bad(format!(
                "checkpoint has {} tensors, model has {expected}",
                container.tensors().len()
            )));
        }
        Ok(model)
    }
}

impl Visit for EmotionModel {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(Visited<'_>)) {
        self.body.visit(&join(prefix, "body"), f);
        self.context.visit(&join(prefix, "context"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
    }
}

/// Scores for one person.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Raw score per category, canonical order.
    pub scores: Vec<f32>,
    /// Valence, arousal, dominance.
    pub vad: [f32; 3],
    /// Categories with scores, highest first.
    pub ranked_categories: Vec<(String, f32)>,
}

fn concat_features(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    let (n, fa) = a.dim();
    let fb = b.dim().1;
    let mut out = Array2::<f32>::zeros((n, fa + fb));
    out.slice_mut(s![.., ..fa]).assign(a);
    out.slice_mut(s![.., fa..]).assign(b);
    out
}

fn stack3<'a>(items: impl Iterator<Item = &'a Array3<f32>>) -> Array4<f32> {
    let items: Vec<&Array3<f32>> = items.collect();
    assert!(!items.is_empty(), "empty batch");
    let (c, h, w) = items[0].dim();
    let mut out = Array4::<f32>::zeros((items.len(), c, h, w));
    for (i, t) in items.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(t);
    }
    out
}
