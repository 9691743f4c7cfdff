//! Static per-modality rendering maps `anatomy -> image`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::profile::{BiologicalProfile, BACKGROUND, LESION, TISSUE_A, TISSUE_B};
use crate::volume::{Grid, Volume};
use crate::{PuirError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Structural,
    Functional,
}

/// Rendering parameters of one modality, shared by every individual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderingMap {
    pub modality_id: String,
    pub kind: ModalityKind,
    /// Tissue class -> mean intensity (structural rendering).
    pub tissue_lut: BTreeMap<u8, f64>,
    pub contrast_gamma: f64,
    pub smoothing_sigma: f64,
    pub noise_sigma: f64,
    /// Tissue class -> metabolic weight (functional rendering).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional_uptake: Option<BTreeMap<u8, f64>>,
}

fn table(entries: [(u8, f64); 4]) -> BTreeMap<u8, f64> {
    entries.into_iter().collect()
}

impl RenderingMap {
    /// T1-like structural contrast: tissue-A bright, tissue-B dark.
    pub fn t1_like(id: &str) -> Self {
        Self {
            modality_id: id.into(),
            kind: ModalityKind::Structural,
            tissue_lut: table([(BACKGROUND, 0.05), (TISSUE_A, 0.8), (TISSUE_B, 0.35), (LESION, 0.55)]),
            contrast_gamma: 1.0,
            smoothing_sigma: 0.6,
            noise_sigma: 0.01,
            functional_uptake: None,
        }
    }

    /// T2-like structural contrast: tissue-B and lesion bright.
    pub fn t2_like(id: &str) -> Self {
        Self {
            modality_id: id.into(),
            kind: ModalityKind::Structural,
            tissue_lut: table([(BACKGROUND, 0.05), (TISSUE_A, 0.35), (TISSUE_B, 0.85), (LESION, 1.0)]),
            contrast_gamma: 0.7,
            smoothing_sigma: 0.6,
            noise_sigma: 0.01,
            functional_uptake: None,
        }
    }

    /// PET-like functional map: near-zero background, lesion uptake highest.
    pub fn pet_like(id: &str) -> Self {
        Self {
            modality_id: id.into(),
            kind: ModalityKind::Functional,
            tissue_lut: table([(BACKGROUND, 0.0), (TISSUE_A, 0.1), (TISSUE_B, 0.25), (LESION, 1.0)]),
            contrast_gamma: 1.0,
            smoothing_sigma: 1.0,
            noise_sigma: 0.01,
            functional_uptake: Some(table([
                (BACKGROUND, 0.0),
                (TISSUE_A, 0.1),
                (TISSUE_B, 0.25),
                (LESION, 1.0),
            ])),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_gamma > 0.0) {
            return Err(PuirError::precondition(format!("{}: contrast_gamma must be > 0", self.modality_id)));
        }
        if !(self.smoothing_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(PuirError::precondition(format!("{}: sigmas must be >= 0", self.modality_id)));
        }
        if self.kind == ModalityKind::Functional && self.functional_uptake.is_none() {
            return Err(PuirError::precondition(format!(
                "{}: functional map needs functional_uptake",
                self.modality_id
            )));
        }
        Ok(())
    }

    /// The class table that drives rendering for this kind.
    pub fn intensity_table(&self) -> &BTreeMap<u8, f64> {
        match (self.kind, &self.functional_uptake) {
            (ModalityKind::Functional, Some(t)) => t,
            _ => &self.tissue_lut,
        }
    }

    /// Upper clip bound: 1.1 times the largest table value.
    pub fn clip_max(&self) -> f64 {
        1.1 * self.intensity_table().values().cloned().fold(0.0, f64::max)
    }

    /// Noise-free, unsmoothed intensity for one voxel.
    pub fn voxel_intensity(&self, class: u8, latent: f64) -> Result<f64> {
        let weight = *self.intensity_table().get(&class).ok_or_else(|| PuirError::MissingLutEntry {
            modality: self.modality_id.clone(),
            class,
        })?;
        Ok(match self.kind {
            ModalityKind::Structural => weight * latent.powf(self.contrast_gamma),
            ModalityKind::Functional => weight * latent,
        })
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing with edge replication.
pub fn gaussian_smooth(grid: &Grid<f64>, sigma: f64) -> Grid<f64> {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let shape = grid.shape();
    let strides = [shape[1] * shape[2], shape[2], 1];
    let mut cur = grid.data().to_vec();
    for axis in 0..3 {
        let n = shape[axis] as isize;
        let stride = strides[axis];
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = ((idx / stride) % shape[axis]) as isize;
            let base = idx - pos as usize * stride;
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let q = (pos + t as isize - radius).clamp(0, n - 1) as usize;
                acc += kv * cur[base + q * stride];
            }
            *out = acc;
        }
        cur = next;
    }
    Grid::new(shape, cur).expect("same shape")
}

/// Render one modality for one individual: table lookup, smoothing, additive
/// Gaussian noise, clipping to `[0, 1.1 * max table value]`.
pub fn render_modality(profile: &BiologicalProfile, map: &RenderingMap, noise_seed: u64) -> Result<Volume> {
    map.validate()?;
    let shape = profile.latent.shape();
    let mut raw = Vec::with_capacity(profile.latent.len());
    for (&c, &l) in profile.label_map.data().iter().zip(profile.latent.data()) {
        raw.push(map.voxel_intensity(c, l)?);
    }
    let smoothed = gaussian_smooth(&Grid::new(shape, raw)?, map.smoothing_sigma);
    let mut values = smoothed.into_data();
    if map.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, map.noise_sigma).expect("sigma validated");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let hi = map.clip_max();
    Volume::from_f64(shape, &values.iter().map(|v| v.clamp(0.0, hi)).collect::<Vec<_>>())
}
