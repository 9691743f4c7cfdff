//! Flat experiment configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::manifest::MANIFEST_FILE;
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::phantom::{AnatomyConfig, GenConfig, RenderingMap};
use crate::trainer::{Missingness, Task, TrainConfig};
use crate::{PuirError, Result};

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "PUIR_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    pub seed: u64,
    /// Seeds of comparative runs (ablation).
    pub seeds: Vec<u64>,

    pub modalities: Vec<String>,
    pub shape: [usize; 3],
    pub train_individuals: usize,
    pub test_individuals: usize,
    pub data_seed: u64,

    pub width: usize,
    pub depth: usize,
    pub slots: usize,
    pub proj_dim: usize,
    pub use_prior: bool,

    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub finetune_lr: f64,
    pub w_contr: f64,
    pub w_decom: f64,
    pub w_equ: f64,
    pub w_inv: f64,
    pub temperature: f64,
    pub use_equivariance: bool,
    pub use_invariance: bool,
    pub exact_mean: bool,
    pub detach_target: bool,
    pub shuffle_modalities: bool,
    pub missingness: Missingness,
    pub checkpoint_every: usize,

    /// Also fine-tune and evaluate segmentation for every ablation cell.
    pub ablation_segmentation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let w = LossWeights::default();
        Self {
            experiment: "puir".into(),
            out_dir: PathBuf::from("runs"),
            data_dir: PathBuf::from("data"),
            seed: 0,
            seeds: vec![0, 1, 2],
            modalities: vec!["t1".into(), "t2".into(), "pet".into()],
            shape: [32, 32, 32],
            train_individuals: 64,
            test_individuals: 16,
            data_seed: 0,
            width: m.width,
            depth: m.depth,
            slots: m.slots,
            proj_dim: m.proj_dim,
            use_prior: m.use_prior,
            epochs: t.epochs,
            finetune_epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            finetune_lr: t.lr,
            w_contr: w.w_contr,
            w_decom: w.w_decom,
            w_equ: w.w_equ,
            w_inv: w.w_inv,
            temperature: w.temperature,
            use_equivariance: t.use_equivariance,
            use_invariance: t.use_invariance,
            exact_mean: t.exact_mean,
            detach_target: t.detach_target,
            shuffle_modalities: t.shuffle_modalities,
            missingness: t.missingness,
            checkpoint_every: t.checkpoint_every,
            ablation_segmentation: false,
        }
    }
}

/// Rendering map for a known modality id.
pub fn rendering_map(id: &str) -> Result<RenderingMap> {
    match id {
        "t1" => Ok(RenderingMap::t1_like(id)),
        "t2" => Ok(RenderingMap::t2_like(id)),
        "pet" => Ok(RenderingMap::pet_like(id)),
        other => Err(PuirError::precondition(format!("unknown modality '{other}' (known: t1, t2, pet)"))),
    }
}

impl ExperimentConfig {
    /// Parse a TOML file; relative paths are resolved against its directory.
    /// `PUIR_SEED` is not applied.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PuirError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.out_dir, &mut cfg.data_dir] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Optional TOML file plus `key=value` overrides (values parsed as TOML,
    /// falling back to plain strings), then `PUIR_SEED`.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| PuirError::io(p, e))?;
                text.parse::<toml::Table>()?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| PuirError::precondition(format!("override '{o}' is not key=value")))?;
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.trim().to_string(), value);
        }
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| PuirError::Schema {
            field: "config".into(),
            message: e.to_string(),
        })?;
        if let Some(dir) = path.and_then(Path::parent) {
            for p in [&mut cfg.out_dir, &mut cfg.data_dir] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        let cfg = cfg.with_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `PUIR_SEED` if set.
    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| PuirError::precondition(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(PuirError::precondition("seeds must not be empty"));
        }
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) {
            return Err(PuirError::precondition("experiment must be a plain, non-empty name"));
        }
        for m in &self.modalities {
            rendering_map(m)?;
        }
        self.gen_config()?.validate()?;
        self.model_config().validate()?;
        self.model_config().check_spatial(self.shape)?;
        self.train_config(Task::Pretrain).validate()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir.join(MANIFEST_FILE)
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        Ok(GenConfig {
            anatomy: AnatomyConfig::for_shape(self.shape),
            modalities: self.modalities.iter().map(|m| rendering_map(m)).collect::<Result<_>>()?,
            train_individuals: self.train_individuals,
            test_individuals: self.test_individuals,
            seed: self.data_seed,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            modalities: self.modalities.len(),
            width: self.width,
            depth: self.depth,
            slots: self.slots,
            proj_dim: self.proj_dim,
            use_prior: self.use_prior,
        }
    }

    /// Training configuration for `task`, writing into `out_dir`.
    pub fn train_config(&self, task: Task) -> TrainConfig {
        let finetune = task != Task::Pretrain;
        TrainConfig {
            task,
            epochs: if finetune { self.finetune_epochs } else { self.epochs },
            batch_size: self.batch_size,
            lr: if finetune { self.finetune_lr } else { self.lr },
            seed: self.seed,
            weights: LossWeights {
                w_contr: self.w_contr,
                w_decom: self.w_decom,
                w_equ: self.w_equ,
                w_inv: self.w_inv,
                temperature: self.temperature,
            },
            model: self.model_config(),
            use_equivariance: self.use_equivariance,
            use_invariance: self.use_invariance,
            exact_mean: self.exact_mean,
            detach_target: self.detach_target,
            shuffle_modalities: self.shuffle_modalities,
            missingness: self.missingness,
            checkpoint_every: self.checkpoint_every,
            manifest: Some(self.manifest_path()),
            out_dir: Some(self.out_dir.clone()),
            ..TrainConfig::default()
        }
    }
}
