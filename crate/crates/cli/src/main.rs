use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use puir::harness::{
    audit_cell, emit_report, evaluate_segmentation, evaluate_transfer, gradcheck, run_ablation, AblationCell,
    ExperimentConfig, ExperimentReport,
};
use puir::io::{load_checkpoint, Checkpoint, LoadOptions, Split};
use puir::phantom::generate_dataset;
use puir::metrics::{enumerate_missingness, MetricsReport, ModalitySubset, SsimConfig};
use puir::trainer::{finetune_seg, finetune_transfer, pretrain, Dataset, Task};
use puir::PuirError;

#[derive(Parser)]
#[command(name = "puir", version, about = "Personalized invariant representation experiments on phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML experiment config (flat keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> puir::Result<ExperimentConfig> {
        ExperimentConfig::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FinetuneTask {
    Seg,
    Transfer,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom corpus into `data_dir`.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overwrite an existing corpus.
        #[arg(long)]
        force: bool,
    },
    /// Pre-train on the corpus.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fine-tune a pre-trained checkpoint.
    Finetune {
        #[arg(long, value_enum)]
        task: FinetuneTask,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "from")]
        from: PathBuf,
        /// Accept a checkpoint whose config hash differs (shapes must still match).
        #[arg(long)]
        allow_hash_mismatch: bool,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "from")]
        from: PathBuf,
        /// `all` or a `+`-separated list of present modalities.
        #[arg(long, default_value = "all")]
        missingness: String,
        #[arg(long)]
        allow_hash_mismatch: bool,
    },
    /// Run the six-cell constraint ablation for every seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Re-derive every reported number from the saved checkpoints.
        #[arg(long)]
        audit: bool,
    },
    /// Finite-difference gradient check of one registered target.
    Gradcheck {
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_ckpt(path: &Path, cfg: &ExperimentConfig, allow: bool) -> puir::Result<Checkpoint> {
    let model = cfg.model_config();
    load_checkpoint(
        path,
        &LoadOptions {
            expected: Some(&model),
            allow_hash_mismatch: allow,
        },
    )
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { cfg, force } => {
            let cfg = cfg.resolve()?;
            let m = generate_dataset(&cfg.gen_config()?, &cfg.data_dir, force)?;
            println!("wrote {} individuals to {}", m.individuals.len(), cfg.manifest_path().display());
        }
        Command::Pretrain { cfg } => {
            let cfg = cfg.resolve()?;
            let out = pretrain(&cfg.train_config(Task::Pretrain))?;
            report_training(&cfg, "pretrain", &out)?;
        }
        Command::Finetune {
            task,
            cfg,
            from,
            allow_hash_mismatch,
        } => {
            let cfg = cfg.resolve()?;
            let ckpt = load_ckpt(&from, &cfg, allow_hash_mismatch)?;
            let (out, name) = match task {
                FinetuneTask::Seg => (finetune_seg(&cfg.train_config(Task::FinetuneSeg), &ckpt)?, "finetune-seg"),
                FinetuneTask::Transfer => (
                    finetune_transfer(&cfg.train_config(Task::FinetuneTransfer), &ckpt)?,
                    "finetune-transfer",
                ),
            };
            report_training(&cfg, name, &out)?;
        }
        Command::Eval {
            cfg,
            from,
            missingness,
            allow_hash_mismatch,
        } => {
            let cfg = cfg.resolve()?;
            let ckpt = load_ckpt(&from, &cfg, allow_hash_mismatch)?;
            let data = Dataset::load(&cfg.manifest_path())?;
            let test = data.split(Split::Test);
            let subsets = if missingness == "all" {
                enumerate_missingness(data.modalities.len())?
            } else {
                vec![ModalitySubset::parse(&missingness, &data.modalities)?]
            };
            let mut metrics = MetricsReport {
                transfer: evaluate_transfer(&ckpt.model, &data.modalities, &test, &SsimConfig::default())?,
                ..Default::default()
            };
            if ckpt.model.has_seg_head() {
                metrics.segmentation = evaluate_segmentation(&ckpt.model, &data.modalities, &test, Some(&subsets))?;
            }
            let mut report = ExperimentReport::new(&format!("{}-eval", cfg.experiment), cfg.seed);
            report.rows = metrics.rows();
            let files = emit_report(&report, &cfg.out_dir)?;
            print!("{}", metrics.to_csv()?);
            println!("report: {}", files.csv.display());
        }
        Command::Ablate { cfg, audit } => {
            let cfg = cfg.resolve()?;
            let data = Dataset::load(&cfg.manifest_path())?;
            let cells = run_ablation(&cfg, &data)?;
            let path = cfg.out_dir.join(format!("{}_ablation.json", cfg.experiment));
            std::fs::write(&path, serde_json::to_string_pretty(&cells)?).with_context(|| path.display().to_string())?;
            for &seed in &cfg.seeds {
                let report = ExperimentReport::from_ablation(&cfg.experiment, seed, &cells);
                if !report.is_empty() {
                    emit_report(&report, &cfg.out_dir)?;
                }
            }
            print_cells(&cells);
            if audit {
                for c in cells.iter().filter(|c| c.error.is_none()) {
                    let diff = audit_cell(c, &data)?;
                    println!("audit {} seed {}: max |diff| = {diff:.3e}", c.name, c.seed);
                    if diff > 1e-6 {
                        anyhow::bail!("audit mismatch for {} (seed {})", c.name, c.seed);
                    }
                }
            }
        }
        Command::Gradcheck { target, seed } => {
            let out = gradcheck(&target, seed)?;
            println!("{}", serde_json::to_string(&out)?);
            if !out.passed() {
                anyhow::bail!("gradient check failed for {target}: max relative error {:.3e}", out.max_rel_err);
            }
        }
    }
    Ok(())
}

fn report_training(cfg: &ExperimentConfig, name: &str, out: &puir::trainer::TrainOutcome) -> anyhow::Result<()> {
    let mut report = ExperimentReport::new(&format!("{}-{name}", cfg.experiment), cfg.seed);
    report.add_history("", &out.history);
    emit_report(&report, &cfg.out_dir)?;
    if let Some(p) = &out.checkpoint_path {
        println!("checkpoint: {}", p.display());
    }
    if let Some(last) = out.history.last() {
        println!("final total loss: {:.6}", last.losses.total);
    }
    Ok(())
}

fn print_cells(cells: &[AblationCell]) {
    println!("cell,seed,mean_ssim,personalization,error");
    for c in cells {
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        println!("{},{},{},{},{}", c.name, c.seed, f(c.mean_ssim()), f(c.personalization), c.error.as_deref().unwrap_or(""));
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let precondition = e.downcast_ref::<PuirError>().is_some_and(PuirError::is_precondition);
            ExitCode::from(if precondition { 2 } else { 1 })
        }
    }
}
