//! Pre-training: contrastive, equivariance, invariance and decomposition
//! constraints accumulated over every modality of an individual.

use std::collections::BTreeMap;
use std::time::Instant;

use puir_autograd::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{Task, TrainConfig};
use super::data::Dataset;
use super::{finish_run, RunLog, TrainOutcome, TrainState};
use crate::io::manifest::Split;
use crate::losses::{self, LossReport};
use crate::model::{self, Model};
use crate::phantom::{apply_rotation, augment, AugConfig, MultiModalSample, RotationTransform};
use crate::seed::{derive_seed, rng_for};
use crate::{PuirError, Result};

/// Sum a list of scalar vars; `None` when empty.
pub(crate) fn sum_vars(g: &mut Graph, vars: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        acc = Some(match acc {
            None => v,
            Some(a) => g.add(a, v)?,
        });
    }
    Ok(acc)
}

pub(crate) fn scalar_or_zero(g: &Graph, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| g.scalar(v))
}

/// Weighted sum `sum_i w_i * v_i` over present terms.
pub(crate) fn weighted_total(g: &mut Graph, terms: &[(f64, Option<Var>)]) -> Result<Option<Var>> {
    let mut scaled = Vec::new();
    for &(w, v) in terms {
        if let Some(v) = v {
            if w != 0.0 {
                scaled.push(g.scale(v, w));
            }
        }
    }
    sum_vars(g, &scaled)
}

/// Record the pre-training loss of one individual on `g`. Returns the total
/// (if any term is active) and the component report.
fn build_pretrain(
    g: &mut Graph,
    p: &model::Bound,
    model: &Model,
    sample: &MultiModalSample,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(Option<Var>, LossReport)> {
    let mc = &model.config;
    if sample.volumes.len() != mc.modalities {
        return Err(PuirError::precondition(format!(
            "pre-training needs all {} modalities for {}, found {}",
            mc.modalities,
            sample.individual_id,
            sample.volumes.len()
        )));
    }
    let w = cfg.effective_weights();
    let mut rng = rng_for(step_seed, "pretrain-step", 0);
    let mut order: Vec<usize> = (0..mc.modalities).collect();
    if cfg.shuffle_modalities {
        order.shuffle(&mut rng);
    }
    let targets = g.constant(sample.stack());

    let (mut contr, mut equ, mut inv, mut decom) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut running: Option<Var> = None;
    for (seen, &i) in order.iter().enumerate() {
        let k = if cfg.use_equivariance { rng.random_range(0..4u8) } else { 0 };
        let rot = RotationTransform::new(k)?;
        let (seed_pos, seed_neg): (u64, u64) = (rng.random(), rng.random());
        let xr = apply_rotation(&sample.volumes[i], rot)?;

        let xv = g.constant(model::replicate_channels(&xr, mc.modalities));
        let enc = model::encode(g, p, mc, xv)?;

        if w.w_contr > 0.0 {
            let pos = augment(&xr, &AugConfig::photometric(), seed_pos);
            let neg = augment(&xr, &AugConfig::default(), seed_neg);
            let pv = g.constant(model::replicate_channels(&pos, mc.modalities));
            let nv = g.constant(model::replicate_channels(&neg, mc.modalities));
            let zp = model::encode(g, p, mc, pv)?.final_map;
            let zn = model::encode(g, p, mc, nv)?.final_map;
            let e = model::project_contrastive(g, p, enc.final_map)?;
            let ep = model::project_contrastive(g, p, zp)?;
            let en = model::project_contrastive(g, p, zn)?;
            contr.push(losses::contrastive_loss(g, e, ep, &[en], w.temperature)?);
        }

        if cfg.use_equivariance {
            let probs = model::predict_rotation(g, p, enc.final_map)?;
            equ.push(losses::equivariance_loss(g, probs, rot)?.0);
        }

        let fused = model::fused_representation(g, p, enc.final_map, mc.use_prior)?;
        if let Some(r) = running {
            let target = if cfg.detach_target { g.detach(r) } else { r };
            inv.push(losses::invariance_loss(g, fused, target)?);
        }
        running = Some(losses::sequential_mean_update(g, running, fused, seen, cfg.exact_mean)?);

        let decoded = model::decode(g, p, mc, fused, &enc.intermediates)?;
        decom.push(losses::decomposition_loss(g, decoded, rot, targets)?);
    }

    let contr = sum_vars(g, &contr)?;
    let equ = sum_vars(g, &equ)?;
    let inv = sum_vars(g, &inv)?;
    let decom = sum_vars(g, &decom)?;
    let total = weighted_total(g, &[(w.w_contr, contr), (w.w_decom, decom), (w.w_equ, equ), (w.w_inv, inv)])?;
    let mut report = LossReport {
        contr: scalar_or_zero(g, contr),
        decom: scalar_or_zero(g, decom),
        equ: scalar_or_zero(g, equ),
        inv: scalar_or_zero(g, inv),
        ..Default::default()
    };
    report.total = losses::pretrain_loss(&report, &w)?;
    Ok((total, report))
}

/// Loss components and parameter gradients for one individual.
pub fn pretrain_gradients(
    model: &Model,
    sample: &MultiModalSample,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(LossReport, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let (total, report) = build_pretrain(&mut g, &p, model, sample, cfg, step_seed)?;
    let grads = match total {
        Some(t) if report.total.is_finite() => {
            let grads = g.backward(t)?;
            p.gradients(&g, &grads)
        }
        _ => BTreeMap::new(),
    };
    Ok((report, grads))
}

/// Loss components without gradients or updates.
pub fn pretrain_eval(model: &Model, sample: &MultiModalSample, cfg: &TrainConfig, step_seed: u64) -> Result<LossReport> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    Ok(build_pretrain(&mut g, &p, model, sample, cfg, step_seed)?.1)
}

/// Average per-sample gradients and apply one optimizer update.
pub(crate) fn apply_batch(state: &mut TrainState, grads: Vec<BTreeMap<String, Tensor>>, lr: f64) {
    let n = grads.len();
    if n == 0 {
        return;
    }
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    for g in grads {
        for (k, t) in g {
            match acc.get_mut(&k) {
                Some(a) => a.add_assign(&t),
                None => {
                    acc.insert(k, t);
                }
            }
        }
    }
    if n > 1 {
        for t in acc.values_mut() {
            *t = t.scale(1.0 / n as f64);
        }
    }
    state.adam.update(&mut state.model.params, &acc, lr);
}

/// One optimizer update on a single individual.
pub fn pretrain_step(state: &mut TrainState, sample: &MultiModalSample, cfg: &TrainConfig, step_seed: u64) -> Result<LossReport> {
    let (report, grads) = pretrain_gradients(&state.model, sample, cfg, step_seed)?;
    if report.is_finite() {
        apply_batch(state, vec![grads], cfg.lr);
    }
    Ok(report)
}

/// Seed for step `step` of epoch `epoch`.
pub fn step_seed(cfg: &TrainConfig, epoch: usize, step: usize) -> u64 {
    derive_seed(cfg.seed, "step", ((epoch as u64) << 32) | step as u64)
}

/// Pre-train on the manifest named in `cfg`.
pub fn pretrain(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| PuirError::precondition("pretrain needs a dataset manifest"))?;
    let data = Dataset::load(path)?;
    pretrain_on(cfg, &data, None)
}

/// Pre-train on an in-memory dataset, optionally continuing from `init`.
pub fn pretrain_on(cfg: &TrainConfig, data: &Dataset, init: Option<Model>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Err(PuirError::precondition("epochs must be at least 1"));
    }
    if cfg.model.modalities != data.modalities.len() {
        return Err(PuirError::precondition(format!(
            "model expects {} modalities, dataset has {}",
            cfg.model.modalities,
            data.modalities.len()
        )));
    }
    cfg.model.check_spatial(data.shape)?;
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(PuirError::precondition("no training individuals"));
    }
    let model = match init {
        Some(m) => m,
        None => Model::new(cfg.model.clone(), cfg.seed)?,
    };
    let mut state = TrainState::new(model, cfg);
    let mut log = RunLog::open(cfg, Task::Pretrain)?;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, "epoch-order", epoch as u64));
        let mut reports = Vec::with_capacity(order.len());
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Vec::with_capacity(batch.len());
            for (j, &idx) in batch.iter().enumerate() {
                let step = b * cfg.batch_size + j;
                let (report, gr) = pretrain_gradients(&state.model, train[idx], cfg, step_seed(cfg, epoch, step))?;
                if !report.is_finite() {
                    return Err(log.non_finite(&state, data, epoch, step, &report));
                }
                reports.push(report);
                grads.push(gr);
            }
            apply_batch(&mut state, grads, cfg.lr);
        }
        state.epoch = epoch;
        let mean = LossReport::mean(&reports);
        log.epoch(&state, data, epoch, mean, start.elapsed().as_secs_f64())?;
    }
    finish_run(state, data, log, Task::Pretrain)
}
