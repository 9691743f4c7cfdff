//! Ground-truth anatomy: a superposition of soft ellipsoidal blobs.
//!
//! Each blob contributes `amplitude * m(p) * sigmoid((1 - rho(p)) / softness)`
//! where `rho` is the ellipsoidal radius of voxel `p` relative to the blob and
//! `m` is an optional linear ramp along `h`. The latent field is the sum of all
//! contributions divided by its maximum; a voxel takes the class of the
//! strongest blob whose ellipsoid (`rho <= 1`) contains it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::rng_for;
use crate::volume::{Grid, LabelMap, Mask};
use crate::{PuirError, Result};

pub const BACKGROUND: u8 = 0;
pub const TISSUE_A: u8 = 1;
pub const TISSUE_B: u8 = 2;
pub const LESION: u8 = 3;
pub const NUM_CLASSES: usize = 4;

/// Inclusive ranges for a family of random blobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub count: [usize; 2],
    /// Semi-axis length in voxels, drawn independently per axis.
    pub radius: [f64; 2],
    pub amplitude: [f64; 2],
}

impl BlobSpec {
    fn validate(&self, name: &str) -> Result<()> {
        if self.count[0] > self.count[1] {
            return Err(PuirError::precondition(format!("{name}.count range is inverted")));
        }
        if !(self.radius[0] > 0.0 && self.radius[1] > 0.0) {
            return Err(PuirError::precondition(format!("{name}.radius must be positive")));
        }
        if self.radius[0] > self.radius[1] || self.amplitude[0] > self.amplitude[1] {
            return Err(PuirError::precondition(format!("{name} range is inverted")));
        }
        if self.amplitude[0] < 0.0 {
            return Err(PuirError::precondition(format!("{name}.amplitude must be non-negative")));
        }
        Ok(())
    }
}

/// The body envelope that gives every phantom a canonical orientation: it is
/// elongated along `h`, brighter towards `+h` (ramp) and hosts tissue-B blobs
/// in its `+h` half only. Without it z-rotations would not be identifiable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    /// Semi-axes as fractions of the grid extent along (d, h, w).
    pub radii_frac: [f64; 3],
    /// Maximal centre offset as a fraction of the grid extent.
    pub center_jitter: f64,
    pub amplitude: [f64; 2],
    /// Relative amplitude change from the `-h` to the `+h` edge of the grid.
    pub ramp: f64,
}

/// Parameters of [`sample_profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnatomyConfig {
    pub shape: [usize; 3],
    pub softness: f64,
    pub body: Option<BodySpec>,
    pub tissue_a: BlobSpec,
    pub tissue_b: BlobSpec,
    pub lesion_probability: f64,
    pub lesion: BlobSpec,
}

impl Default for AnatomyConfig {
    fn default() -> Self {
        Self {
            shape: [32, 32, 32],
            softness: 0.15,
            body: Some(BodySpec {
                radii_frac: [0.38, 0.42, 0.30],
                center_jitter: 0.04,
                amplitude: [0.45, 0.55],
                ramp: 1.8,
            }),
            tissue_a: BlobSpec {
                count: [2, 4],
                radius: [0.09, 0.19].map(|f| f * 32.0),
                amplitude: [0.3, 0.6],
            },
            tissue_b: BlobSpec {
                count: [2, 3],
                radius: [0.08, 0.16].map(|f| f * 32.0),
                amplitude: [0.55, 0.8],
            },
            lesion_probability: 0.7,
            lesion: BlobSpec {
                count: [1, 1],
                radius: [3.0, 5.0],
                amplitude: [1.2, 1.5],
            },
        }
    }
}

impl AnatomyConfig {
    /// Defaults with blob radii rescaled from the 32-voxel reference grid to
    /// the mean extent of `shape`.
    pub fn for_shape(shape: [usize; 3]) -> Self {
        let d = Self::default();
        let f = shape.iter().sum::<usize>() as f64 / 3.0 / 32.0;
        let scale = |b: BlobSpec| BlobSpec {
            radius: b.radius.map(|r| r * f),
            ..b
        };
        Self {
            shape,
            tissue_a: scale(d.tissue_a),
            tissue_b: scale(d.tissue_b),
            lesion: scale(d.lesion),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [d, h, w] = self.shape;
        if h != w {
            return Err(PuirError::precondition(format!(
                "grid shape {:?} has H != W; z-rotations need square planes",
                self.shape
            )));
        }
        if d == 0 || h == 0 {
            return Err(PuirError::precondition("grid shape must be non-empty"));
        }
        if self.softness <= 0.0 {
            return Err(PuirError::precondition("softness must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return Err(PuirError::precondition("lesion_probability must lie in [0, 1]"));
        }
        self.tissue_a.validate("tissue_a")?;
        self.tissue_b.validate("tissue_b")?;
        self.lesion.validate("lesion")?;
        if self.lesion.count[0] == 0 && self.lesion_probability > 0.0 {
            return Err(PuirError::precondition("lesion.count must be at least 1"));
        }
        if let Some(body) = &self.body {
            if body.radii_frac.iter().any(|&r| r <= 0.0) {
                return Err(PuirError::precondition("body.radii_frac must be positive"));
            }
            if body.amplitude[0] > body.amplitude[1] || body.amplitude[0] < 0.0 {
                return Err(PuirError::precondition("body.amplitude range is invalid"));
            }
            if body.ramp.abs() >= 2.0 {
                return Err(PuirError::precondition("body.ramp must lie in (-2, 2)"));
            }
        }
        let tissue_peak = self
            .tissue_a
            .amplitude[1]
            .max(self.tissue_b.amplitude[1])
            .max(self.body.as_ref().map_or(0.0, |b| b.amplitude[1] * (1.0 + b.ramp.abs() / 2.0)));
        if self.lesion_probability > 0.0 && self.lesion.amplitude[0] <= tissue_peak {
            return Err(PuirError::precondition(
                "lesion amplitude must exceed every tissue amplitude so lesions win their centre voxel",
            ));
        }
        Ok(())
    }
}

/// One soft ellipsoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub amplitude: f64,
    pub class: u8,
    /// Relative amplitude ramp along `h` (0 for none).
    pub ramp: f64,
}

impl Blob {
    /// Ellipsoidal radius of voxel `(d, h, w)`; `<= 1` inside the ellipsoid.
    pub fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.radii[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Contribution of the blob at voxel `p` in a grid with `h_extent` rows.
    pub fn value(&self, p: [f64; 3], softness: f64, h_extent: usize) -> f64 {
        let rel_h = if h_extent > 1 {
            p[1] / (h_extent - 1) as f64 - 0.5
        } else {
            0.0
        };
        let modulation = 1.0 + self.ramp * rel_h;
        let s = 1.0 / (1.0 + ((self.rho(p) - 1.0) / softness).exp());
        self.amplitude * modulation * s
    }
}

/// Ground-truth anatomy of one individual.
#[derive(Clone, Debug, PartialEq)]
pub struct BiologicalProfile {
    pub individual_id: String,
    pub latent: Grid<f64>,
    pub label_map: LabelMap,
    pub lesion_mask: Mask,
    pub has_lesion: bool,
    pub seed: u64,
    pub blobs: Vec<Blob>,
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

fn random_blob(rng: &mut ChaCha8Rng, spec: &BlobSpec, center: [f64; 3], class: u8) -> Blob {
    let radii = [0; 3].map(|_| uniform(rng, spec.radius));
    Blob {
        center,
        radii,
        amplitude: uniform(rng, spec.amplitude),
        class,
        ramp: 0.0,
    }
}

/// Uniform point inside the ellipsoid `rho <= max_rho` of `body`, optionally
/// restricted to its `+h` half.
fn point_in(rng: &mut ChaCha8Rng, body: &Blob, max_rho: f64, upper_h: bool) -> [f64; 3] {
    loop {
        let u = [0; 3].map(|_| rng.random_range(-1.0..=1.0f64));
        if u.iter().map(|v| v * v).sum::<f64>() > 1.0 {
            continue;
        }
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = body.center[i] + u[i] * body.radii[i] * max_rho;
        }
        if upper_h {
            p[1] = body.center[1] + (p[1] - body.center[1]).abs();
        }
        return p;
    }
}

fn point_in_grid(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> [f64; 3] {
    shape.map(|n| rng.random_range(0.0..=(n.max(1) - 1) as f64))
}

/// Evaluate the blob superposition: `(normalised latent, labels)`.
pub fn rasterize(blobs: &[Blob], shape: [usize; 3], softness: f64) -> (Grid<f64>, LabelMap) {
    let h_extent = shape[1];
    let mut labels = Vec::with_capacity(shape.iter().product());
    let latent = Grid::from_fn(shape, |d, h, w| {
        let p = [d as f64, h as f64, w as f64];
        let mut total = 0.0;
        let mut best = (BACKGROUND, f64::NEG_INFINITY);
        for b in blobs {
            let v = b.value(p, softness, h_extent);
            total += v;
            if b.rho(p) <= 1.0 && v > best.1 {
                best = (b.class, v);
            }
        }
        labels.push(best.0);
        total
    });
    let peak = latent.data().iter().cloned().fold(0.0, f64::max);
    let latent = if peak > 0.0 { latent.map(|v| v / peak) } else { latent };
    let labels = Grid::new(shape, labels).expect("one label per voxel");
    (latent, labels)
}

/// Draw the anatomy of one individual. Pure function of `(seed, config)`.
pub fn sample_profile(seed: u64, config: &AnatomyConfig) -> Result<BiologicalProfile> {
    config.validate()?;
    let shape = config.shape;
    let mut rng = rng_for(seed, "anatomy", 0);
    let mut blobs = Vec::new();

    let body = config.body.as_ref().map(|spec| {
        let center = [0, 1, 2].map(|i| {
            let n = shape[i] as f64;
            (n - 1.0) / 2.0 + rng.random_range(-1.0..=1.0) * spec.center_jitter * n
        });
        Blob {
            center,
            radii: [0, 1, 2].map(|i| spec.radii_frac[i] * shape[i] as f64),
            amplitude: uniform(&mut rng, spec.amplitude),
            class: TISSUE_A,
            ramp: spec.ramp,
        }
    });
    if let Some(b) = &body {
        blobs.push(b.clone());
    }

    let n_a = rng.random_range(config.tissue_a.count[0]..=config.tissue_a.count[1]);
    for _ in 0..n_a {
        let c = match &body {
            Some(b) => point_in(&mut rng, b, 0.7, false),
            None => point_in_grid(&mut rng, shape),
        };
        blobs.push(random_blob(&mut rng, &config.tissue_a, c, TISSUE_A));
    }
    let n_b = rng.random_range(config.tissue_b.count[0]..=config.tissue_b.count[1]);
    for _ in 0..n_b {
        let c = match &body {
            Some(b) => point_in(&mut rng, b, 0.7, true),
            None => point_in_grid(&mut rng, shape),
        };
        blobs.push(random_blob(&mut rng, &config.tissue_b, c, TISSUE_B));
    }

    let has_lesion = config.lesion_probability > 0.0 && rng.random::<f64>() < config.lesion_probability;
    if has_lesion {
        let (_, tissue_labels) = rasterize(&blobs, shape, config.softness);
        let tissue_voxels: Vec<usize> = tissue_labels
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == TISSUE_A || c == TISSUE_B)
            .map(|(i, _)| i)
            .collect();
        if tissue_voxels.is_empty() {
            return Err(PuirError::precondition(
                "lesion requested but the anatomy has no tissue voxels to host it",
            ));
        }
        let n_l = rng.random_range(config.lesion.count[0]..=config.lesion.count[1]);
        for _ in 0..n_l {
            let idx = tissue_voxels[rng.random_range(0..tissue_voxels.len())];
            let (hw, w) = (shape[1] * shape[2], shape[2]);
            let center = [(idx / hw) as f64, ((idx % hw) / w) as f64, (idx % w) as f64];
            blobs.push(random_blob(&mut rng, &config.lesion, center, LESION));
        }
    }

    let (latent, label_map) = rasterize(&blobs, shape, config.softness);
    let lesion_mask = label_map.map(|c| u8::from(c == LESION));
    Ok(BiologicalProfile {
        individual_id: format!("h{seed:016x}"),
        latent,
        label_map,
        lesion_mask,
        has_lesion,
        seed,
        blobs,
    })
}
