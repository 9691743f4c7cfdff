//! The six-cell constraint ablation grid (contrastive and decomposition
//! always on; equivariance, invariance and the prior toggled).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::{evaluate_segmentation, evaluate_transfer};
use crate::io::checkpoint::{load_checkpoint, Checkpoint, LoadOptions};
use crate::io::manifest::Split;
use crate::metrics::{personalization_score, MetricsReport, SsimConfig};
use crate::model::Model;
use crate::trainer::{fused_maps, pretrain_on, finetune_seg_on, finetune_transfer_on, Dataset, Task};
use crate::{PuirError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub use_equivariance: bool,
    pub use_invariance: bool,
    pub use_prior: bool,
}

impl Toggles {
    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.use_equivariance {
            parts.push("equ");
        }
        if self.use_invariance {
            parts.push("inv");
        }
        if self.use_prior {
            parts.push("prior");
        }
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }

    pub fn is_full(&self) -> bool {
        self.use_equivariance && self.use_invariance && self.use_prior
    }
}

const fn t(e: bool, i: bool, p: bool) -> Toggles {
    Toggles {
        use_equivariance: e,
        use_invariance: i,
        use_prior: p,
    }
}

/// Grid columns in table order; the last one is the full model.
pub const ABLATION_GRID: [Toggles; 6] = [
    t(true, false, false),
    t(false, true, false),
    t(true, true, false),
    t(true, false, true),
    t(false, true, true),
    t(true, true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub toggles: Toggles,
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    /// Inter- over intra-individual distance of held-out fused maps.
    pub personalization: Option<f64>,
    pub pretrain_checkpoint: Option<PathBuf>,
    pub transfer_checkpoint: Option<PathBuf>,
    pub seg_checkpoint: Option<PathBuf>,
    /// Set when the cell failed; the other cells still run.
    pub error: Option<String>,
}

impl AblationCell {
    fn empty(toggles: Toggles, seed: u64) -> Self {
        Self {
            name: toggles.name(),
            toggles,
            seed,
            metrics: None,
            personalization: None,
            pretrain_checkpoint: None,
            transfer_checkpoint: None,
            seg_checkpoint: None,
            error: None,
        }
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        self.metrics.as_ref().and_then(MetricsReport::mean_ssim)
    }
}

fn cell_config(base: &ExperimentConfig, toggles: Toggles, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        use_equivariance: toggles.use_equivariance,
        use_invariance: toggles.use_invariance,
        use_prior: toggles.use_prior,
        out_dir: base.out_dir.join("ablation").join(format!("seed{seed}")).join(toggles.name()),
        ..base.clone()
    }
}

/// Personalization score of held-out fused maps (flattened per individual
/// and modality).
pub fn personalization(model: &Model, data: &Dataset) -> Result<f64> {
    let test = data.split(Split::Test);
    let maps = fused_maps(model, &test)?;
    let emb: Vec<Vec<Vec<f64>>> = maps.iter().map(|ms| ms.iter().map(|t| t.data().to_vec()).collect()).collect();
    personalization_score(&emb)
}

fn run_cell(base: &ExperimentConfig, data: &Dataset, toggles: Toggles, seed: u64) -> Result<AblationCell> {
    let cfg = cell_config(base, toggles, seed);
    let mut cell = AblationCell::empty(toggles, seed);
    let pre = pretrain_on(&cfg.train_config(Task::Pretrain), data, None)?;
    cell.pretrain_checkpoint = pre.checkpoint_path.clone();
    let transfer = if cfg.finetune_epochs > 0 {
        let out = finetune_transfer_on(&cfg.train_config(Task::FinetuneTransfer), data, &pre.checkpoint)?;
        cell.transfer_checkpoint = out.checkpoint_path.clone();
        out.checkpoint
    } else {
        cell.transfer_checkpoint = pre.checkpoint_path.clone();
        pre.checkpoint.clone()
    };
    let test = data.split(Split::Test);
    let mut report = MetricsReport {
        transfer: evaluate_transfer(&transfer.model, &data.modalities, &test, &SsimConfig::default())?,
        ..Default::default()
    };
    cell.personalization = Some(personalization(&pre.checkpoint.model, data)?);
    if cfg.ablation_segmentation {
        let seg = finetune_seg_on(&cfg.train_config(Task::FinetuneSeg), data, &pre.checkpoint)?;
        cell.seg_checkpoint = seg.checkpoint_path.clone();
        report.segmentation = evaluate_segmentation(&seg.checkpoint.model, &data.modalities, &test, None)?;
    }
    cell.metrics = Some(report);
    Ok(cell)
}

/// Train and evaluate every grid cell for every configured seed. A failing
/// cell (error or panic) is recorded and the remaining cells continue.
pub fn run_ablation(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<AblationCell>> {
    cfg.validate()?;
    if data.split(Split::Test).is_empty() {
        return Err(PuirError::precondition("ablation needs held-out individuals"));
    }
    let mut cells = Vec::with_capacity(cfg.seeds.len() * ABLATION_GRID.len());
    for &seed in &cfg.seeds {
        for toggles in ABLATION_GRID {
            log::info!("ablation seed {seed} cell {}", toggles.name());
            let outcome = catch_unwind(AssertUnwindSafe(|| run_cell(cfg, data, toggles, seed)));
            let cell = match outcome {
                Ok(Ok(cell)) => cell,
                Ok(Err(e)) => AblationCell {
                    error: Some(e.to_string()),
                    ..AblationCell::empty(toggles, seed)
                },
                Err(panic) => {
                    let msg = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    AblationCell {
                        error: Some(format!("panicked: {msg}")),
                        ..AblationCell::empty(toggles, seed)
                    }
                }
            };
            if let Some(e) = &cell.error {
                log::warn!("ablation cell {} (seed {seed}) quarantined: {e}", cell.name);
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

fn load(path: &Option<PathBuf>, what: &str) -> Result<Checkpoint> {
    let p = path
        .as_ref()
        .ok_or_else(|| PuirError::precondition(format!("cell has no persisted {what} checkpoint")))?;
    load_checkpoint(p, &LoadOptions::default())
}

/// Re-derive a cell's reported numbers from its persisted checkpoints and
/// return the largest absolute difference.
pub fn audit_cell(cell: &AblationCell, data: &Dataset) -> Result<f64> {
    let stored = cell
        .metrics
        .as_ref()
        .ok_or_else(|| PuirError::precondition(format!("cell {} has no metrics to audit", cell.name)))?;
    let test = data.split(Split::Test);
    let transfer = load(&cell.transfer_checkpoint, "transfer")?;
    let mut again = MetricsReport {
        transfer: evaluate_transfer(&transfer.model, &data.modalities, &test, &SsimConfig::default())?,
        ..Default::default()
    };
    if !stored.segmentation.is_empty() {
        let seg = load(&cell.seg_checkpoint, "segmentation")?;
        again.segmentation = evaluate_segmentation(&seg.model, &data.modalities, &test, None)?;
    }
    let mut worst = max_row_diff(stored, &again)?;
    if let Some(p) = cell.personalization {
        let pre = load(&cell.pretrain_checkpoint, "pre-training")?;
        worst = worst.max((personalization(&pre.model, data)? - p).abs());
    }
    Ok(worst)
}

fn max_row_diff(a: &MetricsReport, b: &MetricsReport) -> Result<f64> {
    let (ra, rb) = (a.rows(), b.rows());
    if ra.len() != rb.len() {
        return Err(PuirError::precondition("audited report has a different layout"));
    }
    let mut worst = 0.0f64;
    for (x, y) in ra.iter().zip(&rb) {
        if x.setting_id != y.setting_id || x.metric != y.metric {
            return Err(PuirError::precondition("audited report has a different layout"));
        }
        let d = if x.value.is_nan() && y.value.is_nan() { 0.0 } else { (x.value - y.value).abs() };
        worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
    }
    Ok(worst)
}
