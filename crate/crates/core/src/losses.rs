//! Pre-training and downstream loss terms as differentiable graph functions.

use puir_autograd::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::phantom::RotationTransform;
use crate::{PuirError, Result};

pub const DICE_EPS: f64 = 1e-5;
pub const PROB_FLOOR: f64 = 1e-12;
pub const UNIT_NORM_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_contr: f64,
    pub w_decom: f64,
    pub w_equ: f64,
    pub w_inv: f64,
    /// Contrastive temperature.
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_contr: 1.0,
            w_decom: 1.0,
            w_equ: 1.0,
            w_inv: 1.0,
            temperature: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_contr, self.w_decom, self.w_equ, self.w_inv];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PuirError::precondition(format!("loss weights must be finite and non-negative: {ws:?}")));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PuirError::precondition("temperature must be positive"));
        }
        Ok(())
    }
}

/// Scalar loss components of one step (or an epoch mean).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub contr: f64,
    pub decom: f64,
    pub equ: f64,
    pub inv: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wce: Option<f64>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.contr, self.decom, self.equ, self.inv, self.total]
            .iter()
            .chain(self.dice.iter())
            .chain(self.wce.iter())
            .all(|v| v.is_finite())
    }

    /// Component-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: &dyn Fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: &dyn Fn(&LossReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        LossReport {
            contr: avg(&|r| r.contr),
            decom: avg(&|r| r.decom),
            equ: avg(&|r| r.equ),
            inv: avg(&|r| r.inv),
            total: avg(&|r| r.total),
            dice: avg_opt(&|r| r.dice),
            wce: avg_opt(&|r| r.wce),
        }
    }
}

fn check_unit(g: &Graph, v: Var, what: &str) -> Result<()> {
    let n = g.value(v).norm();
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(PuirError::precondition(format!("{what} embedding has norm {n}, expected 1")));
    }
    Ok(())
}

/// `-log softmax` of the positive among `[positive, others...]`, with
/// similarities `dot(anchor, .) / t`.
pub fn contrastive_loss(g: &mut Graph, anchor: Var, positive: Var, others: &[Var], t: f64) -> Result<Var> {
    if others.is_empty() {
        return Err(PuirError::precondition("contrastive loss needs at least one other embedding"));
    }
    if !(t > 0.0) {
        return Err(PuirError::precondition("temperature must be positive"));
    }
    check_unit(g, anchor, "anchor")?;
    check_unit(g, positive, "positive")?;
    for &o in others {
        check_unit(g, o, "comparison")?;
    }
    let dim = g.shape(anchor)[0];
    let mut all = vec![positive];
    all.extend_from_slice(others);
    let stacked = g.concat(&all)?;
    let rows = g.reshape(stacked, &[all.len(), dim])?;
    let a = g.reshape(anchor, &[dim, 1])?;
    let sims = g.matmul(rows, a)?;
    let sims = g.reshape(sims, &[all.len()])?;
    let logits = g.scale(sims, 1.0 / t);
    let logp = g.log_softmax_rows(logits)?;
    let lp = g.gather(logp, &[0])?;
    let s = g.sum(lp);
    Ok(g.scale(s, -1.0))
}

/// Mean squared error between two same-shaped tensors.
pub fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(PuirError::shape("mse", g.shape(a), g.shape(b)));
    }
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// MSE between one modality's fused map and the running representation.
pub fn invariance_loss(g: &mut Graph, fused: Var, target: Var) -> Result<Var> {
    mse(g, fused, target)
}

/// Running-representation update on the tape. With `exact_mean` off this is
/// `(running + new) / 2`, which for more than two entries weights later
/// modalities more heavily; `seen` is the number of entries in `running`.
pub fn sequential_mean_update(
    g: &mut Graph,
    running: Option<Var>,
    new: Var,
    seen: usize,
    exact_mean: bool,
) -> Result<Var> {
    let Some(r) = running else {
        return Ok(new);
    };
    if g.shape(r) != g.shape(new) {
        return Err(PuirError::shape("sequential mean", g.shape(r), g.shape(new)));
    }
    let (wr, wn) = if exact_mean {
        let n = seen as f64;
        (n / (n + 1.0), 1.0 / (n + 1.0))
    } else {
        (0.5, 0.5)
    };
    let a = g.scale(r, wr);
    let b = g.scale(new, wn);
    Ok(g.add(a, b)?)
}

/// Value-only form of [`sequential_mean_update`].
pub fn mean_update_tensor(running: &Tensor, new: &Tensor, seen: usize, exact_mean: bool) -> Result<Tensor> {
    if running.shape() != new.shape() {
        return Err(PuirError::shape("sequential mean", running.shape(), new.shape()));
    }
    let (wr, wn) = if exact_mean {
        let n = seen as f64;
        (n / (n + 1.0), 1.0 / (n + 1.0))
    } else {
        (0.5, 0.5)
    };
    let data = running.data().iter().zip(new.data()).map(|(a, b)| wr * a + wn * b).collect();
    Ok(Tensor::new(running.shape().to_vec(), data)?)
}

/// Fold a sequence with [`mean_update_tensor`].
pub fn running_mean(items: &[Tensor], exact_mean: bool) -> Result<Tensor> {
    let (first, rest) = items
        .split_first()
        .ok_or_else(|| PuirError::precondition("running mean of nothing"))?;
    let mut acc = first.clone();
    for (i, t) in rest.iter().enumerate() {
        acc = mean_update_tensor(&acc, t, i + 1, exact_mean)?;
    }
    Ok(acc)
}

/// Cross-entropy of the true rotation class. Returns the loss and whether
/// the probability had to be clamped.
pub fn equivariance_loss(g: &mut Graph, probs: Var, truth: RotationTransform) -> Result<(Var, bool)> {
    if g.shape(probs) != [4] {
        return Err(PuirError::shape("rotation probabilities", &[4], g.shape(probs)));
    }
    let k = truth.quarter_turns() as usize;
    let clamped = g.value(probs).data()[k] <= PROB_FLOOR;
    let p = g.gather(probs, &[k])?;
    let lp = g.log_clamped(p, PROB_FLOOR);
    let s = g.sum(lp);
    Ok((g.scale(s, -1.0), clamped))
}

/// Undo `rotation` on the decoded stack and compare with every modality.
pub fn decomposition_loss(g: &mut Graph, decoded: Var, rotation: RotationTransform, targets: Var) -> Result<Var> {
    if g.shape(decoded) != g.shape(targets) {
        return Err(PuirError::shape("decomposition", g.shape(targets), g.shape(decoded)));
    }
    let back = g.rotate_z(decoded, rotation.inverse().quarter_turns())?;
    mse(g, back, targets)
}

/// `w_contr*contr + w_decom*decom + w_equ*equ + w_inv*inv`.
pub fn pretrain_loss(parts: &LossReport, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.w_contr * parts.contr + weights.w_decom * parts.decom + weights.w_equ * parts.equ + weights.w_inv * parts.inv)
}

/// `1 - (2 sum(p g) + eps) / (sum p + sum g + eps)`.
pub fn dice_loss(g: &mut Graph, probs: Var, labels: &Tensor) -> Result<Var> {
    if g.shape(probs) != labels.shape() {
        return Err(PuirError::shape("dice loss", labels.shape(), g.shape(probs)));
    }
    let gv = g.constant(labels.clone());
    let inter = g.mul(probs, gv)?;
    let inter = g.sum(inter);
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, DICE_EPS);
    let sp = g.sum(probs);
    let den = g.add_scalar(sp, labels.sum() + DICE_EPS);
    let ratio = g.div(num, den)?;
    let neg = g.scale(ratio, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Mean over voxels of `-w[y] log p[y]` for `probs` shaped `[C, ...]`.
/// Returns the loss and whether any probability was clamped.
pub fn weighted_ce_loss(g: &mut Graph, probs: Var, labels: &[u8], class_weights: &[f64]) -> Result<(Var, bool)> {
    let s = g.shape(probs).to_vec();
    let c = s[0];
    let n: usize = s[1..].iter().product();
    if labels.len() != n || class_weights.len() != c {
        return Err(PuirError::shape("weighted cross-entropy", &[c, n], &[class_weights.len(), labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= c) {
        return Err(PuirError::precondition(format!("label {bad} outside {c} classes")));
    }
    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &y)| y as usize * n + i).collect();
    let flat = g.reshape(probs, &[c * n])?;
    let picked = g.gather(flat, &idx)?;
    let clamped = g.value(picked).data().iter().any(|&p| p <= PROB_FLOOR);
    let lp = g.log_clamped(picked, PROB_FLOOR);
    let w = g.constant(Tensor::from_vec(labels.iter().map(|&y| class_weights[y as usize]).collect()));
    let wl = g.mul(lp, w)?;
    let m = g.mean(wl);
    Ok((g.scale(m, -1.0), clamped))
}

/// Balanced inverse-frequency weights `N / (C * n_c)`; absent classes get 1.
pub fn inverse_frequency_weights<'a>(labels: impl IntoIterator<Item = &'a [u8]>, classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for l in labels {
        for &y in l {
            if (y as usize) < classes {
                counts[y as usize] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&n| if n == 0 { 1.0 } else { total as f64 / (classes as f64 * n as f64) })
        .collect()
}

/// Sum over channels of the per-channel MSE.
pub fn transfer_loss(g: &mut Graph, decoded: Var, targets: Var) -> Result<Var> {
    if g.shape(decoded) != g.shape(targets) {
        return Err(PuirError::shape("transfer", g.shape(targets), g.shape(decoded)));
    }
    let m = g.shape(decoded)[0];
    let mut total: Option<Var> = None;
    for c in 0..m {
        let a = g.narrow(decoded, c, 1)?;
        let b = g.narrow(targets, c, 1)?;
        let l = mse(g, a, b)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    total.ok_or_else(|| PuirError::precondition("no channels"))
}

/// `ori + w_inv * inv`.
pub fn downstream_loss(ori: f64, inv: f64, w_inv: f64) -> Result<f64> {
    if !(ori.is_finite() && inv.is_finite()) {
        return Err(PuirError::precondition("downstream loss parts must be finite"));
    }
    if !(w_inv.is_finite() && w_inv >= 0.0) {
        return Err(PuirError::precondition("w_inv must be non-negative"));
    }
    Ok(ori + w_inv * inv)
}
