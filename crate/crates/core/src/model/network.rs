//! Forward graph: encoder, prior retrieval, fusion, decoder and heads.
//!
//! Every function records onto a caller-owned [`Graph`] so the same code
//! serves training (trainable leaves) and inference (constants).

use puir_autograd::{Graph, Tensor, Var};

use super::config::ModelConfig;
use super::params::Bound;
use crate::volume::Volume;
use crate::{PuirError, Result};

/// Final feature map `z` plus the per-level skip features.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub final_map: Var,
    /// Level outputs at decreasing resolution; `len() == depth`.
    pub intermediates: Vec<Var>,
}

/// Stack `m` copies of a single-modality volume as `[m, D, H, W]`.
pub fn replicate_channels(v: &Volume, m: usize) -> Tensor {
    let [d, h, w] = v.shape();
    let one: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let mut data = Vec::with_capacity(m * one.len());
    for _ in 0..m {
        data.extend_from_slice(&one);
    }
    Tensor::new(vec![m, d, h, w], data).expect("replicated length")
}

fn check_input(g: &Graph, cfg: &ModelConfig, x: Var) -> Result<[usize; 3]> {
    let s = g.shape(x);
    if s.len() != 4 || s[0] != cfg.modalities {
        let mut expected = vec![cfg.modalities];
        expected.extend_from_slice(s.get(1..).unwrap_or(&[]));
        return Err(PuirError::shape("encoder input", &expected, s));
    }
    let dims = [s[1], s[2], s[3]];
    cfg.check_spatial(dims)?;
    Ok(dims)
}

/// Strided conv stack; the bottom conv keeps resolution and yields `z`.
pub fn encode(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<EncoderOutput> {
    check_input(g, cfg, x)?;
    let mut h = x;
    let mut intermediates = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let c = g.conv3d(h, p.get(&format!("enc.{l}.w"))?, p.get(&format!("enc.{l}.b"))?, 2, 1)?;
        h = g.silu(c);
        intermediates.push(h);
    }
    let c = g.conv3d(h, p.get("enc.bottom.w")?, p.get("enc.bottom.b")?, 1, 1)?;
    let final_map = g.silu(c);
    Ok(EncoderOutput {
        final_map,
        intermediates,
    })
}

/// Per-voxel single-head attention of `z` over the slot bank.
pub fn retrieve_prior(g: &mut Graph, z: Var, slots: Var) -> Result<Var> {
    let zs = g.shape(z).to_vec();
    let ss = g.shape(slots).to_vec();
    if zs.len() < 2 || ss.len() != 2 || ss[1] != zs[0] {
        return Err(PuirError::shape(
            "prior retrieval (slot dim vs feature channels)",
            &[zs.first().copied().unwrap_or(0)],
            &ss,
        ));
    }
    let c = zs[0];
    let n: usize = zs[1..].iter().product();
    let q = g.reshape(z, &[c, n])?;
    let q = g.transpose(q)?;
    let keys = g.transpose(slots)?;
    let logits = g.matmul(q, keys)?;
    let logits = g.scale(logits, 1.0 / (c as f64).sqrt());
    let attn = g.softmax_rows(logits)?;
    let out = g.matmul(attn, slots)?;
    let out = g.transpose(out)?;
    Ok(g.reshape(out, &zs)?)
}

/// Attention weights `[N, K]` of [`retrieve_prior`], for inspection.
pub fn retrieval_weights(z: &Tensor, slots: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let sv = g.constant(slots.clone());
    let c = z.shape()[0];
    let n = z.len() / c;
    let q = g.reshape(zv, &[c, n])?;
    let q = g.transpose(q)?;
    let keys = g.transpose(sv)?;
    let logits = g.matmul(q, keys)?;
    let logits = g.scale(logits, 1.0 / (c as f64).sqrt());
    let attn = g.softmax_rows(logits)?;
    Ok(g.value(attn).clone())
}

/// `conv1x1(z ++ z')` back to `C_f` channels.
pub fn fuse(g: &mut Graph, p: &Bound, z: Var, z_prior: Var) -> Result<Var> {
    if g.shape(z) != g.shape(z_prior) {
        return Err(PuirError::shape("fuse", g.shape(z), g.shape(z_prior)));
    }
    let cat = g.concat(&[z, z_prior])?;
    Ok(g.conv3d(cat, p.get("fuse.w")?, p.get("fuse.b")?, 1, 0)?)
}

/// Retrieve from the prior (or use zeros when the prior is ablated) and fuse.
pub fn fused_representation(g: &mut Graph, p: &Bound, z: Var, use_prior: bool) -> Result<Var> {
    let z_prior = if use_prior {
        let slots = p.get("prior.slots")?;
        retrieve_prior(g, z, slots)?
    } else {
        let zeros = Tensor::zeros(g.shape(z));
        g.constant(zeros)
    };
    fuse(g, p, z, z_prior)
}

/// Upsampling conv stack with skip concatenation; output `[M, D, H, W]`.
pub fn decode(g: &mut Graph, p: &Bound, cfg: &ModelConfig, xh: Var, skips: &[Var]) -> Result<Var> {
    if skips.len() != cfg.depth {
        return Err(PuirError::shape("decoder skip pyramid", &[cfg.depth], &[skips.len()]));
    }
    let mut h = xh;
    for l in (0..cfg.depth).rev() {
        let (hs, ss) = (g.shape(h).to_vec(), g.shape(skips[l]).to_vec());
        if hs.len() != 4 || ss.len() != 4 || hs[1..] != ss[1..] {
            return Err(PuirError::shape(format!("decoder level {l}"), &hs, &ss));
        }
        let cat = g.concat(&[h, skips[l]])?;
        let c = g.conv3d(cat, p.get(&format!("dec.{l}.w"))?, p.get(&format!("dec.{l}.b"))?, 1, 1)?;
        let a = g.silu(c);
        h = g.upsample2(a)?;
    }
    Ok(g.conv3d(h, p.get("dec.out.w")?, p.get("dec.out.b")?, 1, 0)?)
}

fn linear_on_pooled(g: &mut Graph, p: &Bound, head: &str, z: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(z)?;
    let c = g.shape(pooled)[0];
    let col = g.reshape(pooled, &[c, 1])?;
    let y = g.matmul(p.get(&format!("{head}.w"))?, col)?;
    let out = g.shape(y)[0];
    let y = g.reshape(y, &[out])?;
    Ok(g.add(y, p.get(&format!("{head}.b"))?)?)
}

pub fn rotation_logits(g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
    linear_on_pooled(g, p, "rot", z)
}

/// Softmax over the four quarter-turn classes.
pub fn predict_rotation(g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
    let logits = rotation_logits(g, p, z)?;
    Ok(g.softmax_rows(logits)?)
}

/// Unit-norm contrastive embedding. A zero pre-normalisation vector is an error.
pub fn project_contrastive(g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
    let y = linear_on_pooled(g, p, "proj", z)?;
    g.l2_normalize(y)
        .map_err(|_| PuirError::Undefined("degenerate contrastive embedding (zero vector)".into()))
}

/// Softmax across the leading (channel) axis of `[C, ...]`.
pub fn channel_softmax(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let c = s[0];
    let n: usize = s[1..].iter().product();
    let flat = g.reshape(x, &[c, n])?;
    let t = g.transpose(flat)?;
    let sm = g.softmax_rows(t)?;
    let back = g.transpose(sm)?;
    Ok(g.reshape(back, &s)?)
}

/// Two-class segmentation probabilities `[2, D, H, W]` from decoded channels.
pub fn seg_probs(g: &mut Graph, p: &Bound, decoded: Var) -> Result<Var> {
    let logits = g.conv3d(decoded, p.get("seg.w")?, p.get("seg.b")?, 1, 0)?;
    channel_softmax(g, logits)
}

/// Tensor-level forward outputs for one single-modality input.
#[derive(Clone, Debug)]
pub struct ForwardTensors {
    pub z: Tensor,
    pub intermediates: Vec<Tensor>,
    pub fused: Tensor,
    pub decoded: Tensor,
}
