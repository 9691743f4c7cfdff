use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::{PuirError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Pretrain,
    FinetuneSeg,
    FinetuneTransfer,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pretrain => "pretrain",
            Task::FinetuneSeg => "finetune-seg",
            Task::FinetuneTransfer => "finetune-transfer",
        }
    }
}

/// Which modalities a fine-tuning step sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Missingness {
    /// Uniform over all non-empty modality subsets.
    UniformSubsets,
    /// Every modality, every step.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    /// Individuals whose gradients are averaged per optimizer update.
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub weights: LossWeights,
    pub model: ModelConfig,
    /// Draw a random quarter turn per modality and train the rotation head.
    pub use_equivariance: bool,
    /// Include the cross-modality invariance term.
    pub use_invariance: bool,
    /// Exact running mean instead of the pairwise `(a + b) / 2` update.
    pub exact_mean: bool,
    /// Stop gradients through the running invariance target.
    pub detach_target: bool,
    /// Randomise the modality order per step instead of manifest order.
    pub shuffle_modalities: bool,
    pub missingness: Missingness,
    /// Per-class cross-entropy weights; `None` derives inverse frequencies
    /// from the training split.
    pub class_weights: Option<Vec<f64>>,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Pretrain,
            epochs: 30,
            batch_size: 1,
            lr: 2e-4,
            adam: AdamConfig::default(),
            seed: 0,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            use_equivariance: true,
            use_invariance: true,
            exact_mean: false,
            detach_target: false,
            shuffle_modalities: false,
            missingness: Missingness::UniformSubsets,
            class_weights: None,
            checkpoint_every: 0,
            manifest: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    /// Checks shared by every task; pre-training additionally needs `epochs >= 1`.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(PuirError::precondition("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(PuirError::precondition("learning rate must be finite and non-negative"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != 2 || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(PuirError::precondition("class_weights must be two non-negative numbers"));
            }
        }
        self.weights.validate()?;
        self.model.validate()
    }

    /// Loss weights with disabled constraints zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            w_equ: if self.use_equivariance { self.weights.w_equ } else { 0.0 },
            w_inv: if self.use_invariance { self.weights.w_inv } else { 0.0 },
            ..self.weights
        }
    }
}
