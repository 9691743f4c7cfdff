//! Embedding-space diagnostics: individual-level clustering and a
//! diagonal-Gaussian divergence between embedding populations.

use serde::{Deserialize, Serialize};

use crate::{PuirError, Result};

/// Value returned when intra-individual distance is zero but individuals differ.
pub const PERSONALIZATION_CAP: f64 = 1e12;

/// Variance floor for the Gaussian fits.
pub const VARIANCE_FLOOR: f64 = 1e-8;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean inter-individual distance over mean intra-individual cross-modality
/// distance. `embeddings[i][m]` is the vector of individual `i`, modality `m`.
pub fn personalization_score(embeddings: &[Vec<Vec<f64>>]) -> Result<f64> {
    if embeddings.len() < 2 || embeddings.iter().any(|e| e.len() < 2) {
        return Err(PuirError::precondition(
            "personalization score needs at least 2 individuals with at least 2 modalities each",
        ));
    }
    let dim = embeddings[0][0].len();
    if embeddings.iter().flatten().any(|v| v.len() != dim) {
        return Err(PuirError::precondition("embeddings must share one dimension"));
    }
    let (mut intra, mut n_intra) = (0.0, 0usize);
    let (mut inter, mut n_inter) = (0.0, 0usize);
    for (i, a) in embeddings.iter().enumerate() {
        for (p, u) in a.iter().enumerate() {
            for v in &a[p + 1..] {
                intra += dist(u, v);
                n_intra += 1;
            }
            for b in &embeddings[i + 1..] {
                for v in b {
                    inter += dist(u, v);
                    n_inter += 1;
                }
            }
        }
    }
    let intra = intra / n_intra as f64;
    let inter = inter / n_inter as f64;
    match (intra == 0.0, inter == 0.0) {
        (true, true) => Err(PuirError::Undefined("all embeddings are identical".into())),
        (true, false) => Ok(PERSONALIZATION_CAP),
        _ => Ok((inter / intra).min(PERSONALIZATION_CAP)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlDivergence {
    /// Average of both directed divergences.
    pub value: f64,
    /// Dimensions whose fitted variance hit [`VARIANCE_FLOOR`] in either set.
    pub degenerate_dims: Vec<usize>,
}

fn fit(set: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let n = set.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in set {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for v in set {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    let floored = var.iter().map(|&s| s < VARIANCE_FLOOR).collect();
    let var = var.into_iter().map(|s| s.max(VARIANCE_FLOOR)).collect();
    (mean, var, floored)
}

fn directed(ma: &[f64], va: &[f64], mb: &[f64], vb: &[f64]) -> f64 {
    ma.iter()
        .zip(va)
        .zip(mb.iter().zip(vb))
        .map(|((m1, v1), (m2, v2))| 0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0))
        .sum()
}

/// Symmetrised KL divergence between diagonal Gaussians fitted (population
/// moments) to two embedding sets.
pub fn gaussian_kl_divergence(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<KlDivergence> {
    let dim = a.first().map_or(0, Vec::len);
    if dim == 0 || a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(PuirError::precondition("embedding sets must be non-empty with one shared dimension"));
    }
    if a.len() < dim + 1 || b.len() < dim + 1 {
        return Err(PuirError::precondition(format!(
            "each set needs at least {} samples for dimension {dim}",
            dim + 1
        )));
    }
    let (ma, va, fa) = fit(a, dim);
    let (mb, vb, fb) = fit(b, dim);
    let value = 0.5 * (directed(&ma, &va, &mb, &vb) + directed(&mb, &vb, &ma, &va));
    let degenerate_dims = (0..dim).filter(|&i| fa[i] || fb[i]).collect();
    Ok(KlDivergence {
        value: value.max(0.0),
        degenerate_dims,
    })
}
