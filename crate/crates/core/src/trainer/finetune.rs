//! Fine-tuning for missing-modality segmentation and modality transfer, and
//! the matching inference entry points.

use std::collections::BTreeMap;
use std::time::Instant;

use puir_autograd::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{Missingness, Task, TrainConfig};
use super::data::{lesion_mask, Dataset};
use super::pretrain::{apply_batch, scalar_or_zero, step_seed, sum_vars, weighted_total};
use super::{finish_run, RunLog, TrainOutcome, TrainState};
use crate::io::checkpoint::Checkpoint;
use crate::io::manifest::Split;
use crate::losses::{self, LossReport};
use crate::model::{self, Model};
use crate::phantom::MultiModalSample;
use crate::seed::rng_for;
use crate::volume::{Mask, Volume};
use crate::{PuirError, Result};

/// Foreground probability threshold for binary masks.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Every non-empty subset of `0..m` as sorted index lists, in bitmask order.
pub fn non_empty_subsets(m: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << m)).map(|mask| (0..m).filter(|&i| mask & (1 << i) != 0).collect()).collect()
}

fn present_modalities(cfg: &TrainConfig, m: usize, seed: u64) -> Vec<usize> {
    match cfg.missingness {
        Missingness::Full => (0..m).collect(),
        Missingness::UniformSubsets => {
            let subsets = non_empty_subsets(m);
            let pick = rng_for(seed, "subset", 0).random_range(0..subsets.len());
            subsets[pick].clone()
        }
    }
}

fn build_finetune(
    g: &mut Graph,
    p: &model::Bound,
    model: &Model,
    sample: &MultiModalSample,
    present: &[usize],
    task: Task,
    cfg: &TrainConfig,
    class_weights: &[f64],
) -> Result<(Option<Var>, LossReport)> {
    if present.is_empty() {
        return Err(PuirError::precondition("fine-tuning step with an empty modality subset"));
    }
    let mc = &model.config;
    let w_inv = cfg.effective_weights().w_inv;
    let lesion = lesion_mask(sample);
    let fg = Tensor::new(lesion.shape().to_vec(), lesion.data().iter().map(|&v| f64::from(v)).collect())?;
    let targets = g.constant(sample.stack());

    let (mut dice, mut wce, mut recon, mut inv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut running: Option<Var> = None;
    for (seen, &i) in present.iter().enumerate() {
        let xv = g.constant(model::replicate_channels(&sample.volumes[i], mc.modalities));
        let enc = model::encode(g, p, mc, xv)?;
        let fused = model::fused_representation(g, p, enc.final_map, mc.use_prior)?;
        if let Some(r) = running {
            let target = if cfg.detach_target { g.detach(r) } else { r };
            inv.push(losses::invariance_loss(g, fused, target)?);
        }
        running = Some(losses::sequential_mean_update(g, running, fused, seen, cfg.exact_mean)?);
        let decoded = model::decode(g, p, mc, fused, &enc.intermediates)?;
        match task {
            Task::FinetuneSeg => {
                let probs = model::seg_probs(g, p, decoded)?;
                let f = g.narrow(probs, 1, 1)?;
                let f = g.reshape(f, fg.shape())?;
                dice.push(losses::dice_loss(g, f, &fg)?);
                wce.push(losses::weighted_ce_loss(g, probs, lesion.data(), class_weights)?.0);
            }
            _ => recon.push(losses::transfer_loss(g, decoded, targets)?),
        }
    }
    let dice = sum_vars(g, &dice)?;
    let wce = sum_vars(g, &wce)?;
    let recon = sum_vars(g, &recon)?;
    let inv = sum_vars(g, &inv)?;
    let total = weighted_total(g, &[(1.0, dice), (1.0, wce), (1.0, recon), (w_inv, inv)])?;
    let ori = scalar_or_zero(g, dice) + scalar_or_zero(g, wce) + scalar_or_zero(g, recon);
    let inv_v = scalar_or_zero(g, inv);
    let report = LossReport {
        decom: scalar_or_zero(g, recon),
        inv: inv_v,
        total: losses::downstream_loss(ori, inv_v, w_inv).unwrap_or(f64::NAN),
        dice: dice.map(|v| g.scalar(v)),
        wce: wce.map(|v| g.scalar(v)),
        ..Default::default()
    };
    Ok((total, report))
}

fn finetune_gradients(
    model: &Model,
    sample: &MultiModalSample,
    present: &[usize],
    task: Task,
    cfg: &TrainConfig,
    class_weights: &[f64],
) -> Result<(LossReport, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let (total, report) = build_finetune(&mut g, &p, model, sample, present, task, cfg, class_weights)?;
    let grads = match total {
        Some(t) if report.total.is_finite() => {
            let grads = g.backward(t)?;
            p.gradients(&g, &grads)
        }
        _ => BTreeMap::new(),
    };
    Ok((report, grads))
}

fn check_compatible(ckpt: &Checkpoint, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if ckpt.meta.modalities != data.modalities {
        return Err(PuirError::Checkpoint(format!(
            "checkpoint modalities {:?} differ from the dataset's {:?}",
            ckpt.meta.modalities, data.modalities
        )));
    }
    if ckpt.model.config != cfg.model {
        return Err(PuirError::Checkpoint(format!(
            "checkpoint model {:?} differs from the configured {:?}",
            ckpt.model.config, cfg.model
        )));
    }
    ckpt.model.config.check_spatial(data.shape)
}

fn finetune_on(cfg: &TrainConfig, data: &Dataset, ckpt: &Checkpoint, task: Task) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(ckpt, data, cfg)?;
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(PuirError::precondition("no training individuals"));
    }
    let mut model = ckpt.model.clone();
    let class_weights = match task {
        Task::FinetuneSeg => {
            model.ensure_seg_head(cfg.seed);
            match &cfg.class_weights {
                Some(w) => w.clone(),
                None => {
                    let masks: Vec<Mask> = train.iter().map(|s| lesion_mask(s)).collect();
                    losses::inverse_frequency_weights(masks.iter().map(|m| m.data()), 2)
                }
            }
        }
        _ => vec![1.0, 1.0],
    };
    let mut state = TrainState::new(model, cfg);
    let mut log = RunLog::open(cfg, task)?;
    let start = Instant::now();
    let m = data.modalities.len();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, "finetune-order", epoch as u64));
        let mut reports = Vec::with_capacity(order.len());
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Vec::with_capacity(batch.len());
            for (j, &idx) in batch.iter().enumerate() {
                let step = b * cfg.batch_size + j;
                let seed = step_seed(cfg, epoch, step);
                let mut present = present_modalities(cfg, m, seed);
                if cfg.shuffle_modalities {
                    present.shuffle(&mut rng_for(seed, "modality-order", 0));
                }
                let (report, gr) = finetune_gradients(&state.model, train[idx], &present, task, cfg, &class_weights)?;
                if !report.is_finite() {
                    return Err(log.non_finite(&state, data, epoch, step, &report));
                }
                reports.push(report);
                grads.push(gr);
            }
            apply_batch(&mut state, grads, cfg.lr);
        }
        state.epoch = epoch;
        log.epoch(&state, data, epoch, LossReport::mean(&reports), start.elapsed().as_secs_f64())?;
    }
    if cfg.epochs == 0 {
        state.epoch = ckpt.meta.epoch;
    }
    finish_run(state, data, log, task)
}

fn load_data(cfg: &TrainConfig) -> Result<Dataset> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| PuirError::precondition("fine-tuning needs a dataset manifest"))?;
    Dataset::load(path)
}

pub fn finetune_seg(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<TrainOutcome> {
    finetune_seg_on(cfg, &load_data(cfg)?, ckpt)
}

pub fn finetune_seg_on(cfg: &TrainConfig, data: &Dataset, ckpt: &Checkpoint) -> Result<TrainOutcome> {
    finetune_on(cfg, data, ckpt, Task::FinetuneSeg)
}

pub fn finetune_transfer(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<TrainOutcome> {
    finetune_transfer_on(cfg, &load_data(cfg)?, ckpt)
}

pub fn finetune_transfer_on(cfg: &TrainConfig, data: &Dataset, ckpt: &Checkpoint) -> Result<TrainOutcome> {
    finetune_on(cfg, data, ckpt, Task::FinetuneTransfer)
}

/// Foreground probabilities `[D, H, W]` with fused maps and skips averaged
/// over the available modalities (given as modality indices).
pub fn infer_seg_probs(model: &Model, available: &[(usize, &Volume)]) -> Result<Tensor> {
    if available.is_empty() {
        return Err(PuirError::precondition("segmentation needs at least one modality"));
    }
    if !model.has_seg_head() {
        return Err(PuirError::Checkpoint("model has no segmentation head".into()));
    }
    let mut fused = Vec::with_capacity(available.len());
    let mut skips: Vec<Vec<Tensor>> = vec![Vec::new(); model.config.depth];
    for (_, v) in available {
        v.ensure_same_shape(available[0].1, "available modalities")?;
        let out = model.forward(&model::replicate_channels(v, model.config.modalities))?;
        fused.push(out.fused);
        for (l, t) in out.intermediates.into_iter().enumerate() {
            skips[l].push(t);
        }
    }
    let fused = Tensor::mean_of(&fused)?;
    let skips = skips.iter().map(|s| Tensor::mean_of(s)).collect::<std::result::Result<Vec<_>, _>>()?;
    let decoded = model.decode_from(&fused, &skips)?;
    model.seg_foreground(&decoded)
}

/// Binary lesion mask from whichever modalities are available.
pub fn infer_seg(ckpt: &Checkpoint, available: &[(&str, &Volume)]) -> Result<Mask> {
    let idx = available
        .iter()
        .map(|(id, v)| Ok((ckpt.modality_index(id)?, *v)))
        .collect::<Result<Vec<_>>>()?;
    threshold(&ckpt.model, &idx)
}

pub(crate) fn threshold(model: &Model, available: &[(usize, &Volume)]) -> Result<Mask> {
    let probs = infer_seg_probs(model, available)?;
    let shape = available[0].1.shape();
    Mask::new(shape, probs.data().iter().map(|&p| u8::from(p > MASK_THRESHOLD)).collect())
}

/// Translate `source` (of `source_modality`) into `target_modality`.
pub fn infer_transfer(ckpt: &Checkpoint, source: &Volume, source_modality: &str, target_modality: &str) -> Result<Volume> {
    ckpt.modality_index(source_modality)?;
    let t = ckpt.modality_index(target_modality)?;
    transfer_channel(&ckpt.model, source, t)
}

pub(crate) fn transfer_channel(model: &Model, source: &Volume, target: usize) -> Result<Volume> {
    let out = model.forward(&model::replicate_channels(source, model.config.modalities))?;
    Volume::from_f64(source.shape(), out.decoded.channel(target))
}
