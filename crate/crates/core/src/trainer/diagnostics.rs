//! Held-out measurements of what pre-training is meant to achieve.

use puir_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::model::{replicate_channels, Model};
use crate::phantom::{apply_rotation, MultiModalSample, RotationTransform};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainDiagnostics {
    /// Fraction of (individual, modality, quarter turn) triples whose
    /// rotation-head argmax is the applied turn.
    pub rotation_accuracy: f64,
    /// `sum |R^-1 D(E(R x)) - D(E(x))|^2 / sum |D(E(x))|^2` over non-zero turns.
    pub equivariance_error: f64,
    /// Mean pairwise Euclidean distance between an individual's fused maps.
    pub invariance_distance: f64,
    /// [`Self::invariance_distance`] divided by the mean fused-map norm.
    pub relative_invariance_distance: f64,
}

fn rotated_input(model: &Model, v: &crate::volume::Volume, k: u8) -> Result<Tensor> {
    let r = apply_rotation(v, RotationTransform::new(k)?)?;
    Ok(replicate_channels(&r, model.config.modalities))
}

fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

impl PretrainDiagnostics {
    pub fn compute(model: &Model, samples: &[&MultiModalSample]) -> Result<Self> {
        let (mut hits, mut trials) = (0usize, 0usize);
        let (mut err, mut norm) = (0.0, 0.0);
        let (mut dist, mut fnorm, mut nmaps) = (0.0, 0.0, 0usize);
        for s in samples {
            let mut fused = Vec::with_capacity(s.volumes.len());
            for v in &s.volumes {
                let base = model.forward(&rotated_input(model, v, 0)?)?;
                hits += usize::from(argmax(&model.rotation_probs_from_z(&base.z)?) == 0);
                trials += 1;
                for k in 1..4u8 {
                    let out = model.forward(&rotated_input(model, v, k)?)?;
                    hits += usize::from(argmax(&model.rotation_probs_from_z(&out.z)?) == k as usize);
                    trials += 1;
                    let back = rotate_tensor(&out.decoded, RotationTransform::new(k)?.inverse());
                    err += back.data().iter().zip(base.decoded.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    norm += base.decoded.data().iter().map(|b| b * b).sum::<f64>();
                }
                fused.push(base.fused);
            }
            dist += mean_pairwise_distance(&fused);
            fnorm += fused.iter().map(Tensor::norm).sum::<f64>();
            nmaps += fused.len();
        }
        let n = samples.len().max(1) as f64;
        Ok(Self {
            rotation_accuracy: hits as f64 / trials.max(1) as f64,
            equivariance_error: if norm > 0.0 { err / norm } else { 0.0 },
            invariance_distance: dist / n,
            relative_invariance_distance: if fnorm > 0.0 { dist / n / (fnorm / nmaps as f64) } else { 0.0 },
        })
    }
}

/// Quarter-turn rotation of the trailing two axes of `[C, D, H, W]`.
pub fn rotate_tensor(t: &Tensor, r: RotationTransform) -> Tensor {
    let n = *t.shape().last().expect("rank >= 2");
    let data = puir_autograd::kernels::rotate_planes(t.data(), n, r.quarter_turns());
    Tensor::new(t.shape().to_vec(), data).expect("same length")
}

pub fn mean_pairwise_distance(maps: &[Tensor]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            let d: f64 = maps[i].data().iter().zip(maps[j].data()).map(|(a, b)| (a - b) * (a - b)).sum();
            total += d.sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

pub fn rotation_accuracy(model: &Model, samples: &[&MultiModalSample]) -> Result<f64> {
    Ok(PretrainDiagnostics::compute(model, samples)?.rotation_accuracy)
}

pub fn equivariance_error(model: &Model, samples: &[&MultiModalSample]) -> Result<f64> {
    Ok(PretrainDiagnostics::compute(model, samples)?.equivariance_error)
}

pub fn invariance_distance(model: &Model, samples: &[&MultiModalSample]) -> Result<f64> {
    Ok(PretrainDiagnostics::compute(model, samples)?.invariance_distance)
}

/// Fused maps of every modality for each sample (unrotated inputs).
pub fn fused_maps(model: &Model, samples: &[&MultiModalSample]) -> Result<Vec<Vec<Tensor>>> {
    samples
        .iter()
        .map(|s| {
            s.volumes
                .iter()
                .map(|v| Ok(model.forward(&replicate_channels(v, model.config.modalities))?.fused))
                .collect()
        })
        .collect()
}
