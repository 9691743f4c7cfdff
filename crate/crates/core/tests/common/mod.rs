#![allow(dead_code)]

use puir::{Mask, Volume};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const N: usize = 8;

pub fn random_volume(rng: &mut ChaCha8Rng) -> Volume {
    Volume::from_fn([N; 3], |_, _, _| rng.random_range(-1.0f32..1.0))
}

pub fn random_mask(rng: &mut ChaCha8Rng, p: f64) -> Mask {
    Mask::from_fn([N; 3], |_, _, _| u8::from(rng.random_bool(p)))
}

pub fn f(v: &Volume) -> Vec<f64> {
    v.data().iter().map(|&x| f64::from(x)).collect()
}

pub fn naive_range(g: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in g {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo
}

pub fn naive_psnr(p: &[f64], g: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..g.len() {
        se += (p[i] - g[i]) * (p[i] - g[i]);
    }
    let r = naive_range(g);
    10.0 * (r * r / (se / g.len() as f64)).log10()
}

pub fn naive_nmse(p: &[f64], g: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..g.len() {
        num += (p[i] - g[i]) * (p[i] - g[i]);
        den += g[i] * g[i];
    }
    num / den
}

pub fn naive_ssim(p: &[f64], g: &[f64], k: usize) -> f64 {
    let r = naive_range(g);
    let (c1, c2) = ((0.01 * r).powi(2), (0.03 * r).powi(2));
    let at = |d: usize, h: usize, w: usize| (d * N + h) * N + w;
    let mut total = 0.0;
    let mut count = 0;
    for d in 0..=N - k {
        for h in 0..=N - k {
            for w in 0..=N - k {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for a in d..d + k {
                    for b in h..h + k {
                        for c in w..w + k {
                            xs.push(p[at(a, b, c)]);
                            ys.push(g[at(a, b, c)]);
                        }
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

pub fn naive_dice(p: &Mask, g: &Mask) -> f64 {
    let (mut inter, mut sp, mut sg) = (0, 0, 0);
    for i in 0..p.len() {
        inter += (p.data()[i] & g.data()[i]) as usize;
        sp += p.data()[i] as usize;
        sg += g.data()[i] as usize;
    }
    if sp + sg == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (sp + sg) as f64
    }
}
