//! Image-similarity metrics for modality transfer.

use crate::volume::Volume;
use crate::{PuirError, Result};

/// Table value reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

fn check_pair(pred: &Volume, gt: &Volume) -> Result<()> {
    pred.ensure_same_shape(gt, "prediction vs ground truth")
}

fn mse(pred: &Volume, gt: &Volume) -> f64 {
    let n = gt.len() as f64;
    pred.data().iter().zip(gt.data()).map(|(&p, &g)| (f64::from(p) - f64::from(g)).powi(2)).sum::<f64>() / n
}

/// `10 log10(R^2 / MSE)` with `R` the ground-truth data range; `+inf` when
/// the volumes are identical.
pub fn psnr(pred: &Volume, gt: &Volume) -> Result<f64> {
    check_pair(pred, gt)?;
    let r = gt.data_range();
    if r == 0.0 {
        return Err(PuirError::precondition("psnr needs a non-constant ground truth"));
    }
    let e = mse(pred, gt);
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (r * r / e).log10())
}

/// PSNR with the infinite sentinel replaced by [`PSNR_CAP`].
pub fn psnr_capped(pred: &Volume, gt: &Volume) -> Result<f64> {
    Ok(psnr(pred, gt)?.min(PSNR_CAP))
}

/// `|pred - gt|^2 / |gt|^2`.
pub fn nmse(pred: &Volume, gt: &Volume) -> Result<f64> {
    check_pair(pred, gt)?;
    let den: f64 = gt.data().iter().map(|&g| f64::from(g).powi(2)).sum();
    if den == 0.0 {
        return Err(PuirError::precondition("nmse needs a ground truth with non-zero norm"));
    }
    let num: f64 = pred.data().iter().zip(gt.data()).map(|(&p, &g)| (f64::from(p) - f64::from(g)).powi(2)).sum();
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    /// Odd edge length of the uniform cubic window.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Inclusive 3D prefix sums with a zero border: `t[(d+1, h+1, w+1)]` is the
/// sum over `[0..=d, 0..=h, 0..=w]`.
struct SummedVolume {
    dims: [usize; 3],
    t: Vec<f64>,
}

impl SummedVolume {
    fn new(shape: [usize; 3], f: impl Fn(usize) -> f64) -> Self {
        let dims = [shape[0] + 1, shape[1] + 1, shape[2] + 1];
        let mut t = vec![0.0; dims[0] * dims[1] * dims[2]];
        let at = |d: usize, h: usize, w: usize| (d * dims[1] + h) * dims[2] + w;
        for d in 1..dims[0] {
            for h in 1..dims[1] {
                for w in 1..dims[2] {
                    let v = f(((d - 1) * shape[1] + (h - 1)) * shape[2] + (w - 1));
                    t[at(d, h, w)] = v + t[at(d - 1, h, w)] + t[at(d, h - 1, w)] + t[at(d, h, w - 1)]
                        - t[at(d - 1, h - 1, w)]
                        - t[at(d - 1, h, w - 1)]
                        - t[at(d, h - 1, w - 1)]
                        + t[at(d - 1, h - 1, w - 1)];
                }
            }
        }
        Self { dims, t }
    }

    /// Sum over the cube of edge `k` whose lowest corner is `(d, h, w)`.
    fn cube(&self, d: usize, h: usize, w: usize, k: usize) -> f64 {
        let at = |d: usize, h: usize, w: usize| self.t[(d * self.dims[1] + h) * self.dims[2] + w];
        let (d1, h1, w1) = (d + k, h + k, w + k);
        at(d1, h1, w1) - at(d, h1, w1) - at(d1, h, w1) - at(d1, h1, w) + at(d, h, w1) + at(d, h1, w) + at(d1, h, w)
            - at(d, h, w)
    }
}

/// Mean SSIM over every fully contained window position, using a uniform
/// window, population moments and `C_i = (k_i R)^2` with `R` the
/// ground-truth data range.
pub fn ssim3d(pred: &Volume, gt: &Volume, cfg: &SsimConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    let k = cfg.window;
    let shape = gt.shape();
    if k.is_multiple_of(2) {
        return Err(PuirError::precondition(format!("ssim window must be odd, got {k}")));
    }
    if shape.iter().any(|&s| s < k) {
        return Err(PuirError::precondition(format!("ssim window {k} exceeds volume shape {shape:?}")));
    }
    let r = gt.data_range();
    if r == 0.0 {
        return Err(PuirError::precondition("ssim needs a non-constant ground truth"));
    }
    let (c1, c2) = ((cfg.k1 * r).powi(2), (cfg.k2 * r).powi(2));
    let x = |i: usize| f64::from(pred.data()[i]);
    let y = |i: usize| f64::from(gt.data()[i]);
    let sx = SummedVolume::new(shape, x);
    let sy = SummedVolume::new(shape, y);
    let sxx = SummedVolume::new(shape, |i| x(i) * x(i));
    let syy = SummedVolume::new(shape, |i| y(i) * y(i));
    let sxy = SummedVolume::new(shape, |i| x(i) * y(i));
    let n = (k * k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for d in 0..=shape[0] - k {
        for h in 0..=shape[1] - k {
            for w in 0..=shape[2] - k {
                let mx = sx.cube(d, h, w, k) / n;
                let my = sy.cube(d, h, w, k) / n;
                let vx = sxx.cube(d, h, w, k) / n - mx * mx;
                let vy = syy.cube(d, h, w, k) / n - my * my;
                let cxy = sxy.cube(d, h, w, k) / n - mx * my;
                total += ssim_index(mx, my, vx, vy, cxy, c1, c2);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub(crate) fn ssim_index(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(data: Vec<f32>) -> Volume {
        Volume::new([2, 2, 2], data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let gt = vol(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(psnr(&gt, &gt).unwrap(), f64::INFINITY);
        assert_eq!(psnr_capped(&gt, &gt).unwrap(), PSNR_CAP);
        let shifted = gt.map(|v| v + 0.1);
        assert!((psnr(&shifted, &gt).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&gt, &vol(vec![0.5; 8])).is_err());
    }

    #[test]
    fn nmse_examples() {
        let gt = vol(vec![1.0, -2.0, 3.0, 0.5, 0.0, 1.0, 2.0, 4.0]);
        assert_eq!(nmse(&gt, &gt).unwrap(), 0.0);
        assert_eq!(nmse(&vol(vec![0.0; 8]), &gt).unwrap(), 1.0);
        assert_eq!(nmse(&gt.map(|v| 2.0 * v), &gt).unwrap(), 1.0);
        assert!(nmse(&gt, &vol(vec![0.0; 8])).is_err());
    }

    #[test]
    fn ssim_identity_and_window_errors() {
        let gt = Volume::from_fn([8, 8, 8], |d, h, w| ((d * 7 + h * 3 + w) % 5) as f32);
        assert_eq!(ssim3d(&gt, &gt, &SsimConfig::default()).unwrap(), 1.0);
        let even = SsimConfig { window: 4, ..Default::default() };
        assert!(ssim3d(&gt, &gt, &even).is_err());
        let big = SsimConfig { window: 9, ..Default::default() };
        assert!(ssim3d(&gt, &gt, &big).is_err());
    }
}
