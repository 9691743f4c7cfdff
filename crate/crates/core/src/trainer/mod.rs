//! Training loops, checkpointing and inference entry points.

pub mod adam;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod finetune;
pub mod pretrain;

use std::path::PathBuf;

pub use adam::Adam;
pub use config::{AdamConfig, Missingness, Task, TrainConfig};
pub use data::{lesion_mask, Dataset};
pub use diagnostics::{
    equivariance_error, fused_maps, invariance_distance, rotation_accuracy, PretrainDiagnostics,
};
pub use finetune::{
    finetune_seg, finetune_seg_on, finetune_transfer, finetune_transfer_on, infer_seg, infer_seg_probs,
    infer_transfer, non_empty_subsets,
};
pub use pretrain::{pretrain, pretrain_eval, pretrain_gradients, pretrain_on, pretrain_step, step_seed};

use crate::io::checkpoint::{save_checkpoint, Checkpoint};
use crate::io::log::{EpochRecord, JsonlLog};
use crate::losses::LossReport;
use crate::model::Model;
use crate::{PuirError, Result};

/// Parameters plus optimizer state owned by one training loop.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Model, cfg: &TrainConfig) -> Self {
        Self {
            model,
            adam: Adam::new(cfg.adam),
            epoch: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

pub(crate) struct RunLog {
    task: Task,
    every: usize,
    out_dir: Option<PathBuf>,
    log: Option<JsonlLog>,
    log_path: Option<PathBuf>,
    history: Vec<EpochRecord>,
}

impl RunLog {
    pub(crate) fn open(cfg: &TrainConfig, task: Task) -> Result<Self> {
        let (log, log_path) = match &cfg.out_dir {
            Some(dir) => {
                let p = dir.join(format!("{}_log.jsonl", task.as_str()));
                (Some(JsonlLog::create(&p)?), Some(p))
            }
            None => (None, None),
        };
        Ok(Self {
            task,
            every: cfg.checkpoint_every,
            out_dir: cfg.out_dir.clone(),
            log,
            log_path,
            history: Vec::new(),
        })
    }

    fn checkpoint(&self, state: &TrainState, modalities: &[String], losses: Option<LossReport>) -> Checkpoint {
        Checkpoint::new(state.model.clone(), modalities.to_vec(), self.task.as_str(), state.epoch, losses)
    }

    pub(crate) fn epoch(
        &mut self,
        state: &TrainState,
        data: &data::Dataset,
        epoch: usize,
        losses: LossReport,
        wall_time: f64,
    ) -> Result<()> {
        log::info!("{} epoch {epoch}: total {:.6}", self.task.as_str(), losses.total);
        let rec = EpochRecord {
            epoch,
            losses,
            wall_time,
        };
        if let Some(l) = &mut self.log {
            l.append(&rec)?;
        }
        self.history.push(rec);
        if let Some(dir) = &self.out_dir {
            if self.every > 0 && epoch.is_multiple_of(self.every) {
                let p = dir.join(format!("{}_epoch{epoch:04}.ckpt", self.task.as_str()));
                save_checkpoint(&self.checkpoint(state, &data.modalities, Some(losses)), &p)?;
            }
        }
        Ok(())
    }

    /// Persist a snapshot (when an output directory exists) and build the error.
    pub(crate) fn non_finite(
        &self,
        state: &TrainState,
        data: &data::Dataset,
        epoch: usize,
        step: usize,
        report: &LossReport,
    ) -> PuirError {
        let mut detail = format!("{report:?}");
        if let Some(dir) = &self.out_dir {
            let p = dir.join(format!("{}_nonfinite.ckpt", self.task.as_str()));
            match save_checkpoint(&self.checkpoint(state, &data.modalities, None), &p) {
                Ok(()) => detail.push_str(&format!("; snapshot at {}", p.display())),
                Err(e) => detail.push_str(&format!("; snapshot failed: {e}")),
            }
        }
        PuirError::NonFiniteLoss { epoch, step, detail }
    }
}

pub(crate) fn finish_run(state: TrainState, data: &data::Dataset, log: RunLog, task: Task) -> Result<TrainOutcome> {
    let last = log.history.last().map(|r| r.losses);
    let ckpt = log.checkpoint(&state, &data.modalities, last);
    let checkpoint_path = match &log.out_dir {
        Some(dir) => {
            let p = dir.join(format!("{}.ckpt", task.as_str()));
            save_checkpoint(&ckpt, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainOutcome {
        checkpoint: ckpt,
        history: log.history,
        checkpoint_path,
        log_path: log.log_path,
    })
}
