//! Held-out evaluation of checkpoints: modality transfer and
//! missing-modality segmentation.

use puir_autograd::Tensor;

use crate::metrics::{
    self, challenge_dice, confusion_rates_from, dice, enumerate_missingness, ModalitySubset, SegSetting, SsimConfig,
    TransferPair,
};
use crate::model::{replicate_channels, ForwardTensors, Model};
use crate::phantom::MultiModalSample;
use crate::trainer::finetune::MASK_THRESHOLD;
use crate::trainer::lesion_mask;
use crate::volume::{Mask, Volume};
use crate::{PuirError, Result};

/// Mean PSNR (capped), NMSE and SSIM for every ordered pair of distinct
/// modalities, translating from the source alone.
pub fn evaluate_transfer(
    model: &Model,
    modalities: &[String],
    samples: &[&MultiModalSample],
    ssim: &SsimConfig,
) -> Result<Vec<TransferPair>> {
    if samples.is_empty() {
        return Err(PuirError::precondition("transfer evaluation needs held-out individuals"));
    }
    let m = modalities.len();
    let mut sums = vec![[0.0f64; 3]; m * m];
    for s in samples {
        for src in 0..m {
            let out = model.forward(&replicate_channels(&s.volumes[src], model.config.modalities))?;
            for tgt in (0..m).filter(|&t| t != src) {
                let pred = Volume::from_f64(s.volumes[tgt].shape(), out.decoded.channel(tgt))?;
                let gt = &s.volumes[tgt];
                let acc = &mut sums[src * m + tgt];
                acc[0] += metrics::psnr_capped(&pred, gt)?;
                acc[1] += metrics::nmse(&pred, gt)?;
                acc[2] += metrics::ssim3d(&pred, gt, ssim)?;
            }
        }
    }
    let n = samples.len() as f64;
    let mut pairs = Vec::new();
    for src in 0..m {
        for tgt in (0..m).filter(|&t| t != src) {
            let acc = sums[src * m + tgt];
            pairs.push(TransferPair {
                source: modalities[src].clone(),
                target: modalities[tgt].clone(),
                mn: m - 1,
                psnr: acc[0] / n,
                nmse: acc[1] / n,
                ssim: acc[2] / n,
            });
        }
    }
    Ok(pairs)
}

/// Foreground probabilities from per-modality forward passes, averaging the
/// fused maps and skips of the modalities in `present`.
pub fn fused_seg_probs(model: &Model, passes: &[ForwardTensors], present: &[usize]) -> Result<Tensor> {
    let fused: Vec<Tensor> = present.iter().map(|&i| passes[i].fused.clone()).collect();
    let fused = Tensor::mean_of(&fused)?;
    let skips = (0..model.config.depth)
        .map(|l| {
            let level: Vec<Tensor> = present.iter().map(|&i| passes[i].intermediates[l].clone()).collect();
            Tensor::mean_of(&level)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    model.seg_foreground(&model.decode_from(&fused, &skips)?)
}

/// Segmentation metrics for every setting in `subsets` (all non-empty
/// subsets when `None`).
pub fn evaluate_segmentation(
    model: &Model,
    modalities: &[String],
    samples: &[&MultiModalSample],
    subsets: Option<&[ModalitySubset]>,
) -> Result<Vec<SegSetting>> {
    if samples.is_empty() {
        return Err(PuirError::precondition("segmentation evaluation needs held-out individuals"));
    }
    if !model.has_seg_head() {
        return Err(PuirError::Checkpoint("model has no segmentation head".into()));
    }
    let all;
    let subsets = match subsets {
        Some(s) => s,
        None => {
            all = enumerate_missingness(modalities.len())?;
            &all
        }
    };
    let mut per_setting: Vec<Vec<(Mask, Mask)>> = vec![Vec::new(); subsets.len()];
    for s in samples {
        let passes = s
            .volumes
            .iter()
            .map(|v| model.forward(&replicate_channels(v, model.config.modalities)))
            .collect::<Result<Vec<_>>>()?;
        let gt = lesion_mask(s);
        for (k, subset) in subsets.iter().enumerate() {
            let probs = fused_seg_probs(model, &passes, &subset.present)?;
            let pred = Mask::new(gt.shape(), probs.data().iter().map(|&p| u8::from(p > MASK_THRESHOLD)).collect())?;
            per_setting[k].push((pred, gt.clone()));
        }
    }
    subsets
        .iter()
        .zip(per_setting)
        .map(|(subset, cases)| seg_setting(subset, modalities, &cases))
        .collect()
}

fn seg_setting(subset: &ModalitySubset, modalities: &[String], cases: &[(Mask, Mask)]) -> Result<SegSetting> {
    let n = cases.len() as f64;
    let (mut d, mut dm, mut both_empty) = (0.0, 0.0, 0usize);
    let (mut cd_pos, mut n_pos) = (0.0, 0usize);
    let mut classes = Vec::with_capacity(cases.len());
    for (p, g) in cases {
        d += dice(p, g)?;
        if !p.any() && !g.any() {
            both_empty += 1;
        }
        let (c, class) = challenge_dice(p, g)?;
        dm += c;
        if g.any() {
            cd_pos += c;
            n_pos += 1;
        }
        classes.push(class);
    }
    Ok(SegSetting {
        setting_id: subset.setting_id(modalities),
        present: subset.present_names(modalities),
        mn: subset.mn(),
        dice: d / n,
        both_empty,
        challenge_dice: (n_pos > 0).then(|| cd_pos / n_pos as f64),
        dice_minus: dm / n,
        rates: confusion_rates_from(&classes),
    })
}
