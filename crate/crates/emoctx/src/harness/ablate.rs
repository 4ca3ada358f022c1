//! Ablation grids: train every cell of a config grid and line the
//! results up in one table.
//!
//! The built-in grid ([`ablation_grid`]) crosses the two architecture
//! toggles this toolkit studies:
//!
//! * **INW** — the context trunk starts from object-centric
//!   pretraining instead of scene-centric pretraining.
//! * **224B** — the body crop is enlarged to the context resolution
//!   instead of the smaller default.
//!
//! Cells are cached by config hash: a cell whose output directory
//! already holds a run record and checkpoint is reused, so interrupted
//! grids resume instead of recomputing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{config_hash, train, RunRecord, TrainConfig};
use crate::model::ContextPretraining;

/// One grid cell's outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationRow {
    /// Position in the grid.
    pub index: usize,
    pub config_hash: String,
    /// Context trunk pretrained on an object-centric corpus.
    pub inw: bool,
    /// Body crop enlarged to the context resolution.
    pub big_body: bool,
    /// Trunk architecture(s), `body` or `body/context` when they differ.
    pub backbone: String,
    /// Best validation mean AP, absent when the run failed.
    pub mean_ap: Option<f64>,
    /// Validation affect MAE at the best epoch, absent when the run
    /// failed.
    pub mean_mae: Option<f64>,
    /// The failure, when the run did not finish.
    pub error: Option<String>,
}

/// All cells of one grid, in grid order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Render as an aligned text table: one row per cell, check marks
    /// for the toggles, AP in percent (higher is better), affect MAE
    /// (lower is better).
    pub fn format(&self) -> String {
        let mut lines = vec![
            "| run | backbone | INW | 224B | mAP (%) ↑ | VAD MAE ↓ |".to_string(),
            "|----:|:---------|:---:|:----:|----------:|----------:|".to_string(),
        ];
        for row in &self.rows {
            let mark = |on: bool| if on { "✓" } else { " " };
            let (ap, mae) = match (&row.error, row.mean_ap, row.mean_mae) {
                (Some(e), _, _) => (format!("failed: {e}"), String::new()),
                (None, Some(ap), Some(mae)) => {
                    (format!("{:.2}", ap * 100.0), format!("{mae:.4}"))
                }
                _ => ("?".to_string(), "?".to_string()),
            };
            lines.push(format!(
                "| {:>3} | {:<8} | {:^3} | {:^4} | {:>9} | {:>9} |",
                row.index,
                row.backbone,
                mark(row.inw),
                mark(row.big_body),
                ap,
                mae
            ));
        }
        lines.join("\n") + "\n"
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("table serializes");
        std::fs::write(dir.join("table.json"), json).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("table.md"), self.format()).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<AblationTable> {
        let path = dir.join("table.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
            msg: format!("bad ablation table {}: {e}", path.display()),
        })
    }
}

/// The 2x2 grid over the INW and 224B toggles, everything else taken
/// from `base`. Row order: neither, INW, 224B, both.
pub fn ablation_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut grid = Vec::with_capacity(4);
    for &big_body in &[false, true] {
        for &pretraining in &[ContextPretraining::Scene, ContextPretraining::Object] {
            let mut config = base.clone();
            config.model.context_pretraining = pretraining;
            if big_body {
                config.model.body_crop_side = config.model.context_side;
            }
            grid.push(config);
        }
    }
    grid
}

fn cell_dir(out_dir: &Path, hash: &str) -> PathBuf {
    out_dir.join(&hash[..16])
}

fn cell_is_complete(dir: &Path) -> bool {
    dir.join("run_record.json").is_file() && dir.join("best.ckpt").is_file()
}

/// Train (or reuse) every config and assemble the table. Individual
/// failures are captured per row rather than aborting the grid; the
/// table is saved under `out_dir` either way.
pub fn run_ablation(configs: &[TrainConfig], out_dir: &Path) -> Result<AblationTable> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig {
            msg: "ablation needs at least one config".to_string(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let min_body = configs
        .iter()
        .map(|c| c.model.body_crop_side)
        .min()
        .expect("nonempty grid");

    let mut rows = Vec::with_capacity(configs.len());
    for (index, config) in configs.iter().enumerate() {
        let hash = config_hash(config);
        let dir = cell_dir(out_dir, &hash);
        let backbone = if config.model.body_backbone == config.model.context_backbone {
            config.model.body_backbone.to_string()
        } else {
            format!(
                "{}/{}",
                config.model.body_backbone, config.model.context_backbone
            )
        };
        let mut row = AblationRow {
            index,
            config_hash: hash,
            inw: config.model.context_pretraining == ContextPretraining::Object,
            big_body: config.model.body_crop_side > min_body,
            backbone,
            mean_ap: None,
            mean_mae: None,
            error: None,
        };

        let record: Result<RunRecord> = if cell_is_complete(&dir) {
            log::info!("ablation cell {index}: reusing {}", dir.display());
            RunRecord::load(&dir.join("run_record.json"))
        } else {
            train(config, &dir).map(|(_, record)| record)
        };
        match record {
            Ok(record) => {
                row.mean_ap = Some(record.best_val_mean_ap);
                row.mean_mae = record
                    .epochs
                    .iter()
                    .find(|e| e.epoch == record.best_epoch)
                    .map(|e| e.val_mean_mae);
            }
            Err(e) => {
                log::warn!("ablation cell {index} failed: {e}");
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    let table = AblationTable { rows };
    table.save(out_dir)?;
    Ok(table)
}
