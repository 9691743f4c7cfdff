//! Contrastive-view augmentation: sub-volume crop with edge replication,
//! in-plane flip, intensity scaling and additive Gaussian noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::volume::Volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    pub crop: bool,
    /// Smallest crop extent per axis as a fraction of the input extent.
    pub crop_min_frac: f64,
    pub flip: bool,
    pub intensity: bool,
    pub intensity_range: [f64; 2],
    pub noise: bool,
    /// Noise sigma as a fraction of the input data range.
    pub noise_frac: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            crop: true,
            crop_min_frac: 0.6,
            flip: true,
            intensity: true,
            intensity_range: [0.9, 1.1],
            noise: true,
            noise_frac: 0.01,
        }
    }
}

impl AugConfig {
    pub fn off() -> Self {
        Self {
            crop: false,
            flip: false,
            intensity: false,
            noise: false,
            ..Self::default()
        }
    }

    /// Photometric-only view of the same sub-volume.
    pub fn photometric() -> Self {
        Self {
            crop: false,
            flip: false,
            ..Self::default()
        }
    }
}

/// The random draws behind one augmented view.
#[derive(Clone, Debug, PartialEq)]
pub struct AugParams {
    /// Inclusive `(lo, hi)` crop box per axis.
    pub crop: Option<[(usize, usize); 3]>,
    pub flip: bool,
    pub scale: Option<f64>,
    pub noise_sigma: Option<f64>,
}

/// Apply [`augment`] and also return the drawn parameters.
pub fn augment_with_params(v: &Volume, cfg: &AugConfig, seed: u64) -> (Volume, AugParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = v.shape();
    let mut params = AugParams {
        crop: None,
        flip: false,
        scale: None,
        noise_sigma: None,
    };
    let mut out = v.clone();

    if cfg.crop {
        let frac = cfg.crop_min_frac.clamp(0.0, 1.0);
        let bounds = [0, 1, 2].map(|a| {
            let n = shape[a];
            let min_len = ((n as f64 * frac).ceil() as usize).clamp(1, n);
            let len = rng.random_range(min_len..=n);
            let lo = rng.random_range(0..=n - len);
            (lo, lo + len - 1)
        });
        out = Volume::from_fn(shape, |d, h, w| {
            let c = |x: usize, a: usize| x.clamp(bounds[a].0, bounds[a].1);
            v.get(c(d, 0), c(h, 1), c(w, 2))
        });
        params.crop = Some(bounds);
    }
    if cfg.flip {
        params.flip = rng.random_bool(0.5);
        if params.flip {
            let src = out.clone();
            let w = shape[2];
            out = Volume::from_fn(shape, |d, h, x| src.get(d, h, w - 1 - x));
        }
    }
    if cfg.intensity {
        let [lo, hi] = cfg.intensity_range;
        let s = rng.random_range(lo..=hi);
        out.data_mut().iter_mut().for_each(|x| *x = (*x as f64 * s) as f32);
        params.scale = Some(s);
    }
    if cfg.noise {
        let sigma = cfg.noise_frac * v.data_range();
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            out.data_mut()
                .iter_mut()
                .for_each(|x| *x = (*x as f64 + normal.sample(&mut rng)) as f32);
        }
        params.noise_sigma = Some(sigma);
    }
    (out, params)
}

/// Random view of `v`, deterministic in `seed`.
pub fn augment(v: &Volume, cfg: &AugConfig, seed: u64) -> Volume {
    augment_with_params(v, cfg, seed).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol() -> Volume {
        Volume::from_fn([4, 6, 6], |d, h, w| (d * 36 + h * 6 + w) as f32 * 0.01)
    }

    #[test]
    fn all_off_is_identity() {
        assert_eq!(augment(&vol(), &AugConfig::off(), 3), vol());
    }

    #[test]
    fn seeded() {
        let cfg = AugConfig::default();
        assert_eq!(augment(&vol(), &cfg, 3), augment(&vol(), &cfg, 3));
        assert_ne!(augment(&vol(), &cfg, 3), augment(&vol(), &cfg, 4));
    }

    #[test]
    fn intensity_only_scales_exactly() {
        let cfg = AugConfig {
            intensity: true,
            ..AugConfig::off()
        };
        let (out, p) = augment_with_params(&vol(), &cfg, 11);
        let s = p.scale.unwrap();
        assert!((0.9..=1.1).contains(&s));
        for (a, b) in out.data().iter().zip(vol().data()) {
            assert_eq!(*a, (*b as f64 * s) as f32);
        }
    }

    #[test]
    fn crop_keeps_inner_box_and_replicates_edges() {
        let cfg = AugConfig {
            crop: true,
            ..AugConfig::off()
        };
        let v = vol();
        let (out, p) = augment_with_params(&v, &cfg, 5);
        let b = p.crop.unwrap();
        for d in 0..4 {
            for h in 0..6 {
                for w in 0..6 {
                    let inside = (b[0].0..=b[0].1).contains(&d)
                        && (b[1].0..=b[1].1).contains(&h)
                        && (b[2].0..=b[2].1).contains(&w);
                    if inside {
                        assert_eq!(out.get(d, h, w), v.get(d, h, w));
                    }
                }
            }
        }
    }
}
