//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 and 9 are exact properties and fail the run when violated.
//! Criteria 6-8 are directional training outcomes; they are reported but do
//! not fail the run. Set `PUIR_ACCEPTANCE_QUICK=1` to skip them.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use puir::harness::{gradcheck, run_ablation, ExperimentConfig, SEED_ENV, TARGETS};
use puir::io::{file_hash, load_checkpoint, read_log, Checkpoint, LoadOptions, Split};
use puir::losses::running_mean;
use puir::metrics::*;
use puir::model::{Model, ModelConfig};
use puir::phantom::{apply_rotation, generate_dataset, GenConfig, RotationTransform};
use puir::trainer::*;
use puir::{Grid, Mask};
use puir_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

// Desk-scale optimisation settings shared by criteria 6-8.
const WIDTH: usize = 16;
const SLOTS: usize = 16;
const PROJ_DIM: usize = 16;
const LR: f64 = 4e-3;
const SEG_EPOCHS: usize = 4;

// Reduced scale for the 18-run ablation grid.
const ABLATION_TRAIN: usize = 24;
const ABLATION_TEST: usize = 8;
const ABLATION_EPOCHS: usize = 12;

struct Line {
    id: &'static str,
    hard: bool,
    pass: Option<bool>,
    detail: String,
}

impl Line {
    fn print(&self) {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        let kind = if self.hard { "exact" } else { "directional" };
        println!("[{tag}] criterion {} ({kind}): {}", self.id, self.detail);
    }
}

fn majority(wins: &[bool]) -> bool {
    2 * wins.iter().filter(|&&w| w).count() > wins.len()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn metric_oracles() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SsimConfig::default();
    let mut worst = 0.0f64;
    let mut track = |a: f64, b: f64| worst = worst.max((a - b).abs());
    let mut cases = Vec::new();
    for i in 0..50 {
        let (p, g) = (random_volume(&mut rng), random_volume(&mut rng));
        let (pf, gf) = (f(&p), f(&g));
        track(psnr(&p, &g).unwrap(), naive_psnr(&pf, &gf));
        track(nmse(&p, &g).unwrap(), naive_nmse(&pf, &gf));
        track(ssim3d(&p, &g, &cfg).unwrap(), naive_ssim(&pf, &gf, cfg.window));

        let dp = [0.0, 0.02, 0.3][i % 3];
        let dg = if rng.random_bool(0.3) { 0.0 } else { 0.2 };
        let (mp, mg) = (random_mask(&mut rng, dp), random_mask(&mut rng, dg));
        track(dice(&mp, &mg).unwrap(), naive_dice(&mp, &mg));
        let positive = mp.count() > 0 && mg.count() > 0;
        let expected = if positive { naive_dice(&mp, &mg) } else { 0.0 };
        track(challenge_dice(&mp, &mg).unwrap().0, expected);
        cases.push((mp, mg));
    }
    let refs: Vec<(&Mask, &Mask)> = cases.iter().map(|(p, g)| (p, g)).collect();
    let rates = confusion_rates(&refs).unwrap();
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let pos = cases.iter().filter(|(_, g)| g.count() > 0).count();
    let neg = cases.len() - pos;
    let tp = cases.iter().filter(|(p, g)| g.count() > 0 && p.count() > 0).count();
    let tn = cases.iter().filter(|(p, g)| g.count() == 0 && p.count() == 0).count();
    let pairs = [
        (rates.tpr, rate(tp, pos)),
        (rates.fnr, rate(pos - tp, pos)),
        (rates.tnr, rate(tn, neg)),
        (rates.fpr, rate(neg - tn, neg)),
    ];
    let mut rates_ok = true;
    for (got, want) in pairs {
        match (got, want) {
            (Some(a), Some(b)) => track(a, b),
            (None, None) => {}
            _ => rates_ok = false,
        }
    }
    let t = start.elapsed();
    Line {
        id: "1",
        hard: true,
        pass: Some(worst <= 1e-9 && rates_ok && t < Duration::from_secs(30)),
        detail: format!(
            "psnr/nmse/ssim3d/dice/challenge_dice/confusion_rates vs naive on 50 pairs: max |diff| {worst:.2e} (tol 1e-9), {:.2} s (< 30 s)",
            secs(t)
        ),
    }
}

fn gradient_suite() -> Line {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    let mut skipped = 0;
    for &target in TARGETS {
        for seed in 0..3 {
            match gradcheck(target, seed) {
                Ok(out) => {
                    if out.skipped.is_some() {
                        skipped += 1;
                    } else {
                        worst = worst.max(out.max_rel_err);
                    }
                    if !out.passed() {
                        failed.push(format!("{target}/{seed}"));
                    }
                }
                Err(e) => failed.push(format!("{target}/{seed}: {e}")),
            }
        }
    }
    let t = start.elapsed();
    Line {
        id: "2",
        hard: true,
        pass: Some(failed.is_empty() && worst < 1e-4 && t < Duration::from_secs(120)),
        detail: format!(
            "gradcheck over {} targets x 3 seeds: max rel err {worst:.2e} (tol 1e-4), {skipped} non-smooth skips, failures {failed:?}, {:.1} s (< 120 s)",
            TARGETS.len(),
            secs(t)
        ),
    }
}

fn rotation_group() -> Line {
    let start = Instant::now();
    let mut ok = true;
    for a in RotationTransform::ALL {
        ok &= a.then(a.inverse()) == RotationTransform::IDENTITY;
        ok &= a.inverse().then(a) == RotationTransform::IDENTITY;
        for b in RotationTransform::ALL {
            let sum = RotationTransform::new((a.quarter_turns() + b.quarter_turns()) % 4).unwrap();
            ok &= a.then(b) == sum;
        }
    }
    let v = Grid::new([1, 2, 2], vec![1, 2, 3, 4]).unwrap();
    let quarter = RotationTransform::new(1).unwrap();
    let r = apply_rotation(&v, quarter).unwrap();
    ok &= r.data() == [2, 4, 1, 3];
    ok &= apply_rotation(&r, quarter.inverse()).unwrap() == v;
    let t = start.elapsed();
    Line {
        id: "3",
        hard: true,
        pass: Some(ok && t < Duration::from_secs(1)),
        detail: format!(
            "composition table, inverses and [[1,2],[3,4]] -> [[2,4],[1,3]]: {}, {:.4} s (< 1 s)",
            if ok { "exact" } else { "mismatch" },
            secs(t)
        ),
    }
}

fn missingness() -> Line {
    let s = enumerate_missingness(4).unwrap();
    let count = |g: &str| s.iter().filter(|x| x.group() == g).count();
    let groups = [count("FM"), count("MN1"), count("MN2"), count("MN3")];
    Line {
        id: "4",
        hard: true,
        pass: Some(s.len() == 15 && groups == [1, 4, 6, 4]),
        detail: format!("4 modalities -> {} settings, FM/MN1/MN2/MN3 = {groups:?} (want 15, [1, 4, 6, 4])", s.len()),
    }
}

fn sequential_mean() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let b = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let seq = running_mean(&[a.clone(), b.clone()], false).unwrap();
        for ((s, x), y) in seq.data().iter().zip(a.data()).zip(b.data()) {
            worst = worst.max((s - (x + y) / 2.0).abs());
        }
    }
    let scalars: Vec<Tensor> = [0.0, 0.0, 12.0].iter().map(|&v| Tensor::new(vec![1], vec![v]).unwrap()).collect();
    let seq = running_mean(&scalars, false).unwrap().data()[0];
    let exact = running_mean(&scalars, true).unwrap().data()[0];
    Line {
        id: "5",
        hard: true,
        pass: Some(worst <= 1e-12 && seq == 6.0 && exact == 4.0),
        detail: format!(
            "two modalities: max |sequential - exact| {worst:.2e} (tol 1e-12); (0, 0, 12): sequential {seq}, exact {exact} (want 6 vs 4)"
        ),
    }
}

fn set_seed_env(seed: &str) {
    std::env::set_var(SEED_ENV, seed);
}

/// Runs gen-data, pretrain, and both fine-tunes through the same entry
/// points the CLI uses, returning comparable artefacts.
fn pipeline(root: &Path, seed: &str) -> Artefacts {
    set_seed_env(seed);
    let overrides: Vec<String> = [
        format!("data_dir=\"{}\"", root.join("data").display()),
        format!("out_dir=\"{}\"", root.join("runs").display()),
        "shape=[16, 16, 16]".into(),
        "train_individuals=2".into(),
        "test_individuals=1".into(),
        "width=4".into(),
        "depth=2".into(),
        "slots=4".into(),
        "proj_dim=4".into(),
        "epochs=1".into(),
        "finetune_epochs=1".into(),
        "lr=0.001".into(),
        "finetune_lr=0.001".into(),
    ]
    .into();
    let cfg = ExperimentConfig::resolve(None, &overrides).unwrap();
    generate_dataset(&cfg.gen_config().unwrap(), &cfg.data_dir, false).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(&cfg.data_dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let data_bytes = files.iter().map(|p| std::fs::read(p).unwrap()).collect();

    let mut runs = Vec::new();
    let pre = pretrain(&cfg.train_config(Task::Pretrain)).unwrap();
    let ckpt = load_checkpoint(pre.checkpoint_path.as_ref().unwrap(), &LoadOptions::default()).unwrap();
    runs.push(pre);
    runs.push(finetune_seg(&cfg.train_config(Task::FinetuneSeg), &ckpt).unwrap());
    runs.push(finetune_transfer(&cfg.train_config(Task::FinetuneTransfer), &ckpt).unwrap());
    let runs = runs
        .iter()
        .map(|r| {
            let log = read_log(r.log_path.as_ref().unwrap()).unwrap();
            let view = log.into_iter().map(|e| EpochRecordView { epoch: e.epoch, losses: format!("{:?}", e.losses) }).collect();
            (view, file_hash(r.checkpoint_path.as_ref().unwrap()).unwrap())
        })
        .collect();
    std::env::remove_var(SEED_ENV);
    (data_bytes, runs)
}

/// Dataset file contents, then per run its log and checkpoint hash.
type Artefacts = (Vec<Vec<u8>>, Vec<(Vec<EpochRecordView>, String)>);

/// Log record without its wall-clock field.
#[derive(PartialEq, Debug)]
struct EpochRecordView {
    epoch: usize,
    losses: String,
}

fn reproducibility() -> Line {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = pipeline(dirs[0].path(), "7");
    let b = pipeline(dirs[1].path(), "7");
    let c = pipeline(dirs[2].path(), "8");
    let same = a == b;
    let differs = a.1.iter().zip(&c.1).all(|(x, y)| x.1 != y.1);
    Line {
        id: "9",
        hard: true,
        pass: Some(same && differs),
        detail: format!(
            "gen-data/pretrain/finetune seg/finetune transfer twice with PUIR_SEED=7: data, logs (minus wall_time) and checkpoint hashes identical: {same}; PUIR_SEED=8 changes every checkpoint hash: {differs}"
        ),
    }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        width: WIDTH,
        slots: SLOTS,
        proj_dim: PROJ_DIM,
        ..Default::default()
    }
}

fn mean_pretrain_loss(model: &Model, data: &Dataset, cfg: &TrainConfig) -> f64 {
    let train = data.split(Split::Train);
    // Epoch 0 never occurs in training, so these views are fixed and unseen.
    let total: f64 = train
        .iter()
        .enumerate()
        .map(|(i, s)| pretrain_eval(model, s, cfg, step_seed(cfg, 0, i)).unwrap().total)
        .sum();
    total / train.len() as f64
}

struct PretrainRun {
    seed: u64,
    checkpoint: Checkpoint,
    loss: (f64, f64),
    init: PretrainDiagnostics,
    last: PretrainDiagnostics,
    time: Duration,
}

fn pretrain_runs(data: &Dataset, root: &Path) -> Vec<PretrainRun> {
    let test = data.split(Split::Test);
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                epochs: 30,
                lr: LR,
                seed,
                model: model_config(),
                out_dir: Some(root.join(format!("pretrain-seed{seed}"))),
                ..Default::default()
            };
            let init_model = Model::new(cfg.model.clone(), seed).unwrap();
            let init = PretrainDiagnostics::compute(&init_model, &test).unwrap();
            let l0 = mean_pretrain_loss(&init_model, data, &cfg);
            let start = Instant::now();
            let out = pretrain_on(&cfg, data, None).unwrap();
            let time = start.elapsed();
            let last = PretrainDiagnostics::compute(&out.checkpoint.model, &test).unwrap();
            let l1 = mean_pretrain_loss(&out.checkpoint.model, data, &cfg);
            println!(
                "    seed {seed}: L_pre {l0:.4} -> {l1:.4}, rotation acc {:.3} -> {:.3}, equivariance err {:.4} -> {:.4}, fused distance {:.4} -> {:.4} (relative {:.4} -> {:.4}), {:.0} s",
                init.rotation_accuracy,
                last.rotation_accuracy,
                init.equivariance_error,
                last.equivariance_error,
                init.invariance_distance,
                last.invariance_distance,
                init.relative_invariance_distance,
                last.relative_invariance_distance,
                secs(time)
            );
            PretrainRun {
                seed,
                checkpoint: out.checkpoint,
                loss: (l0, l1),
                init,
                last,
                time,
            }
        })
        .collect()
}

fn pretraining_lines(runs: &[PretrainRun]) -> Vec<Line> {
    let all = |f: &dyn Fn(&PretrainRun) -> bool| runs.iter().all(f);
    let list = |f: &dyn Fn(&PretrainRun) -> String| runs.iter().map(f).collect::<Vec<_>>().join(", ");
    let slowest = runs.iter().map(|r| secs(r.time)).fold(0.0, f64::max);
    vec![
        Line {
            id: "6a",
            hard: false,
            pass: Some(all(&|r| r.loss.1 < r.loss.0)),
            detail: format!(
                "final L_pre < initial on every seed: {}; slowest seed {slowest:.0} s (target <= 1800 s)",
                list(&|r| format!("seed {} {:.4} -> {:.4}", r.seed, r.loss.0, r.loss.1))
            ),
        },
        Line {
            id: "6b",
            hard: false,
            pass: Some(all(&|r| r.last.rotation_accuracy >= 0.90)),
            detail: format!(
                "held-out rotation accuracy >= 0.90 on every seed: {}",
                list(&|r| format!("{:.3}", r.last.rotation_accuracy))
            ),
        },
        Line {
            id: "6c",
            hard: false,
            pass: Some(all(&|r| r.last.equivariance_error <= 0.5 * r.init.equivariance_error)),
            detail: format!(
                "equivariance error drops >= 50% on every seed: {}",
                list(&|r| format!("{:+.1}%", 100.0 * (r.last.equivariance_error / r.init.equivariance_error - 1.0)))
            ),
        },
        Line {
            id: "6d",
            hard: false,
            pass: Some(all(&|r| r.last.invariance_distance <= 0.5 * r.init.invariance_distance)),
            detail: format!(
                "cross-modality fused distance drops >= 50% on every seed: {}",
                list(&|r| format!("{:+.1}%", 100.0 * (r.last.invariance_distance / r.init.invariance_distance - 1.0)))
            ),
        },
    ]
}

fn ablation(root: &Path) -> (Line, Vec<puir::harness::AblationCell>) {
    let cfg = ExperimentConfig {
        out_dir: root.join("ablation"),
        seeds: SEEDS.to_vec(),
        train_individuals: ABLATION_TRAIN,
        test_individuals: ABLATION_TEST,
        data_seed: 1,
        width: WIDTH,
        slots: SLOTS,
        proj_dim: PROJ_DIM,
        epochs: ABLATION_EPOCHS,
        finetune_epochs: 0,
        lr: LR,
        ..Default::default()
    };
    let data = Dataset::generate(&cfg.gen_config().unwrap()).unwrap();
    let start = Instant::now();
    let cells = run_ablation(&cfg, &data).unwrap();
    let mut full_wins = Vec::new();
    let mut conflict_holds = Vec::new();
    for &seed in &SEEDS {
        let of_seed: Vec<_> = cells.iter().filter(|c| c.seed == seed).collect();
        let ssim = |name: &str| of_seed.iter().find(|c| c.name == name).and_then(|c| c.mean_ssim());
        let full = of_seed.iter().find(|c| c.toggles.is_full()).and_then(|c| c.mean_ssim());
        let others: Vec<Option<f64>> = of_seed.iter().filter(|c| !c.toggles.is_full()).map(|c| c.mean_ssim()).collect();
        let row: Vec<String> = of_seed
            .iter()
            .map(|c| match c.mean_ssim() {
                Some(s) => format!("{} {s:.4}", c.name),
                None => format!("{} failed", c.name),
            })
            .collect();
        println!("    seed {seed}: {}", row.join(", "));
        full_wins.push(full.is_some_and(|f| others.iter().all(|o| o.is_some_and(|o| f >= o))));
        conflict_holds.push(matches!((full, ssim("equ+inv")), (Some(f), Some(e)) if e <= f));
    }
    let pass = majority(&full_wins) && majority(&conflict_holds);
    let line = Line {
        id: "7",
        hard: false,
        pass: Some(pass),
        detail: format!(
            "held-out transfer SSIM ({ABLATION_TRAIN}/{ABLATION_TEST} individuals, {ABLATION_EPOCHS} epochs): full >= every ablated cell per seed {full_wins:?}; equ+inv without prior <= full per seed {conflict_holds:?}; majority of 3 required for both, {:.0} s",
            secs(start.elapsed())
        ),
    };
    (line, cells)
}

fn transfer_benefit(data: &Dataset, runs: &[PretrainRun], cells: &[puir::harness::AblationCell], root: &Path) -> Line {
    let mn2: Vec<ModalitySubset> = enumerate_missingness(data.modalities.len())
        .unwrap()
        .into_iter()
        .filter(|s| s.mn() == 2)
        .collect();
    let test = data.split(Split::Test);
    let start = Instant::now();
    let mut dice_wins = Vec::new();
    let mut dice_pairs = Vec::new();
    for run in runs {
        let cfg = TrainConfig {
            task: Task::FinetuneSeg,
            epochs: SEG_EPOCHS,
            lr: LR,
            seed: run.seed,
            model: model_config(),
            out_dir: Some(root.join(format!("seg-seed{}", run.seed))),
            ..Default::default()
        };
        let scratch = Checkpoint::new(Model::new(model_config(), run.seed).unwrap(), data.modalities.clone(), "init", 0, None);
        let score = |ckpt: &Checkpoint| {
            let out = finetune_seg_on(&cfg, data, ckpt).unwrap();
            let report = MetricsReport {
                segmentation: puir::harness::evaluate_segmentation(&out.checkpoint.model, &data.modalities, &test, Some(&mn2)).unwrap(),
                ..Default::default()
            };
            report.mean_dice(2).unwrap()
        };
        let (pre, scr) = (score(&run.checkpoint), score(&scratch));
        dice_wins.push(pre >= scr);
        dice_pairs.push(format!("{pre:.4} vs {scr:.4}"));
    }
    let mut pers_wins = Vec::new();
    let mut pers_pairs = Vec::new();
    for &seed in &SEEDS {
        let get = |name: &str| cells.iter().find(|c| c.seed == seed && c.name == name).and_then(|c| c.personalization);
        let (full, no_prior) = (get("equ+inv+prior"), get("equ+inv"));
        pers_wins.push(matches!((full, no_prior), (Some(f), Some(n)) if f > n));
        pers_pairs.push(format!("{full:.4?} vs {no_prior:.4?}"));
    }
    Line {
        id: "8",
        hard: false,
        pass: Some(majority(&dice_wins) && majority(&pers_wins)),
        detail: format!(
            "MN=2 seg DICE pretrained vs scratch ({SEG_EPOCHS} fine-tune epochs) [{}] -> {dice_wins:?}; personalization full vs no-prior (ablation scale) [{}] -> {pers_wins:?}; majority of 3 required for both, {:.0} s",
            dice_pairs.join(", "),
            pers_pairs.join(", "),
            secs(start.elapsed())
        ),
    }
}

fn main() -> ExitCode {
    let quick = std::env::var("PUIR_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    // `cargo test -- --list` expects a listing, not a run.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut lines = vec![metric_oracles(), gradient_suite(), rotation_group(), missingness(), sequential_mean()];
    for l in &lines {
        l.print();
    }
    let repro = reproducibility();
    repro.print();
    lines.push(repro);

    if quick {
        for id in ["6", "7", "8"] {
            let l = Line {
                id,
                hard: false,
                pass: None,
                detail: "skipped (PUIR_ACCEPTANCE_QUICK=1)".into(),
            };
            l.print();
            lines.push(l);
        }
    } else {
        let root = tempfile::tempdir().unwrap();
        let data = Dataset::generate(&GenConfig {
            train_individuals: 64,
            test_individuals: 16,
            ..Default::default()
        })
        .unwrap();
        println!("criterion 6: pre-training 64/16 individuals, 32^3, 3 modalities, 30 epochs, seeds {SEEDS:?}");
        let runs = pretrain_runs(&data, root.path());
        for l in pretraining_lines(&runs) {
            l.print();
            lines.push(l);
        }
        println!("criterion 7: ablation grid, mean held-out transfer SSIM");
        let (l, cells) = ablation(root.path());
        l.print();
        lines.push(l);
        let l = transfer_benefit(&data, &runs, &cells, root.path());
        l.print();
        lines.push(l);
    }

    let hard_fail: Vec<_> = lines.iter().filter(|l| l.hard && l.pass != Some(true)).map(|l| l.id).collect();
    let soft_fail: Vec<_> = lines.iter().filter(|l| !l.hard && l.pass == Some(false)).map(|l| l.id).collect();
    println!("acceptance summary: exact failures {hard_fail:?}, directional failures {soft_fail:?}");
    if hard_fail.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
