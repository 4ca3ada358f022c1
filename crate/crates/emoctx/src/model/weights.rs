//! Pretrained trunk weight files.
//!
//! Trunks load their pretrained parameters from container files named
//! `<backbone>_<scheme>.ckpt` inside a weights directory. Two paths put
//! files there: [`ingest`] validates and normalizes a container exported
//! from another framework (see `tools/export_torchvision.py`), and
//! [`synthesize`] writes deterministic stand-in weights so the full
//! pipeline can run offline.

use std::path::{Path, PathBuf};

use crate::ckpt::Container;
use crate::error::{Error, Result};
use crate::model::{Backbone, ContextPretraining};
use crate::nn::{ResNet, Visit};
use crate::seeded_rng;

/// Container kind for trunk weight files.
pub const TRUNK_KIND: &str = "trunk";

/// Canonical file name for a backbone/scheme pair, e.g.
/// `resnet18_scene.ckpt`.
pub fn weight_file_name(backbone: Backbone, scheme: ContextPretraining) -> String {
    format!("{}_{}.ckpt", backbone, scheme)
}

fn fresh_trunk(backbone: Backbone) -> ResNet {
    let mut rng = seeded_rng(0, "weights/shape-template");
    match backbone {
        Backbone::ResNet18 => ResNet::resnet18(&mut rng),
        Backbone::ResNet50 => ResNet::resnet50(&mut rng),
    }
}

fn trunk_container(
    net: &mut ResNet,
    backbone: Backbone,
    scheme: ContextPretraining,
    origin: &str,
) -> Container {
    let mut container = Container::new(TRUNK_KIND);
    container.meta = serde_json::json!({
        "backbone": backbone.as_str(),
        "scheme": scheme.as_str(),
        "origin": origin,
    });
    net.visit("", &mut |v| {
        container.push(
            &v.name,
            v.value.shape().to_vec(),
            v.value.iter().copied().collect(),
        );
    });
    container
}

/// Copy a validated trunk container's tensors into `net`. The container
/// must cover the trunk exactly: every tensor present, same shapes,
/// nothing extra.
fn apply(net: &mut ResNet, container: &Container, origin: &Path) -> Result<()> {
    let bad = |msg: String| Error::BadCheckpoint {
        path: origin.to_path_buf(),
        msg,
    };
    let mut expected = 0usize;
    let mut problem: Option<String> = None;
    net.visit("", &mut |v| {
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
            "weight file has {} tensors, trunk has {expected}",
            container.tensors().len()
        )));
    }
    Ok(())
}

fn check_meta(container: &Container, origin: &Path) -> Result<(Backbone, ContextPretraining)> {
    let bad = |msg: String| Error::BadCheckpoint {
        path: origin.to_path_buf(),
        msg,
    };
    if container.kind != TRUNK_KIND {
        return Err(bad(format!(
            "container kind '{}' is not a trunk weight file",
            container.kind
        )));
    }
    let backbone = container.meta["backbone"]
        .as_str()
        .ok_or_else(|| bad("missing 'backbone' in metadata".to_string()))?
        .parse::<Backbone>()?;
    let scheme = container.meta["scheme"]
        .as_str()
        .ok_or_else(|| bad("missing 'scheme' in metadata".to_string()))?
        .parse::<ContextPretraining>()?;
    Ok((backbone, scheme))
}

/// Validate an exported trunk container and install it into `dest_dir`
/// under its canonical name. Returns the installed path.
pub fn ingest(src: &Path, dest_dir: &Path) -> Result<PathBuf> {
    let container = Container::load(src)?;
    let (backbone, scheme) = check_meta(&container, src)?;
    // Round-trip through a fresh trunk to verify names and shapes.
    let mut probe = fresh_trunk(backbone);
    apply(&mut probe, &container, src)?;
    let dest = dest_dir.join(weight_file_name(backbone, scheme));
    container.save(&dest)?;
    Ok(dest)
}

/// Write deterministic stand-in weights for a backbone/scheme pair.
/// Different schemes produce different tensors, so ablations that swap
/// pretraining sources remain meaningful offline.
pub fn synthesize(
    backbone: Backbone,
    scheme: ContextPretraining,
    dest_dir: &Path,
    seed: u64,
) -> Result<PathBuf> {
    let mut rng = seeded_rng(seed, &format!("synth/{backbone}/{scheme}"));
    let mut net = match backbone {
        Backbone::ResNet18 => ResNet::resnet18(&mut rng),
        Backbone::ResNet50 => ResNet::resnet50(&mut rng),
    };
    let container = trunk_container(&mut net, backbone, scheme, "synthesized");
    let dest = dest_dir.join(weight_file_name(backbone, scheme));
    container.save(&dest)?;
    Ok(dest)
}

/// Load `<backbone>_<scheme>.ckpt` from `dir` into `net`.
pub(crate) fn load_trunk(
    net: &mut ResNet,
    backbone: Backbone,
    scheme: ContextPretraining,
    dir: &Path,
) -> Result<()> {
    let path = dir.join(weight_file_name(backbone, scheme));
    if !path.is_file() {
        return Err(Error::MissingWeights {
            backbone: backbone.as_str().to_string(),
            scheme: scheme.as_str().to_string(),
            path,
        });
    }
    let container = Container::load(&path)?;
    let (file_backbone, file_scheme) = check_meta(&container, &path)?;
    if file_backbone != backbone || file_scheme != scheme {
        return Err(Error::BadCheckpoint {
            path,
            msg: format!(
                "file says {file_backbone}/{file_scheme}, expected {backbone}/{scheme}"
            ),
        });
    }
    apply(net, &container, &path)
}
