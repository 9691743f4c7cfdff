//! Registry of gradient-check targets on tiny random 64-bit instances.

use puir_autograd::check::{compare, numeric_gradients, DEFAULT_STEP};
use puir_autograd::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::losses;
use crate::model::{self, model_specs, seg_head_specs, Bound, ModelConfig, ParamStore};
use crate::phantom::RotationTransform;
use crate::seed::rng_for;
use crate::{PuirError, Result};

/// Acceptance threshold on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

pub const TARGETS: &[&str] = &[
    "contrastive_loss",
    "invariance_loss",
    "sequential_mean_update",
    "equivariance_loss",
    "equivariance_loss_clamped",
    "decomposition_loss",
    "dice_loss",
    "weighted_ce_loss",
    "transfer_loss",
    "encode",
    "retrieve_prior",
    "fuse",
    "decode",
    "predict_rotation",
    "project_contrastive",
    "seg_head",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    pub target: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Set when the instance sits on a non-smooth point and was not compared.
    pub skipped: Option<String>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.skipped.is_some() || (self.checked > 0 && self.max_rel_err < GRADCHECK_TOL)
    }
}

/// Analytic gradients of `build` w.r.t. every input, compared with central
/// differences of the same function.
pub fn check_with<B>(build: B, inputs: &[Tensor]) -> Result<(f64, f64, usize)>
where
    B: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let eval = |ts: &[Tensor]| -> puir_autograd::Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars).map_err(|_| puir_autograd::AutogradError::Empty("gradcheck evaluation"))?;
        Ok(g.scalar(out))
    };
    let numeric = numeric_gradients(&eval, inputs, DEFAULT_STEP)?;
    let r = compare(&analytic, &numeric);
    Ok((r.max_rel_err, r.max_abs_err, r.checked))
}

struct Instance<R: Rng> {
    rng: R,
}

impl<R: Rng> Instance<R> {
    fn tensor(&mut self, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-scale..scale)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape")
    }
}

/// Scalarise with a fixed random weighting so every output element carries
/// a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, v: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(v, wv)?;
    Ok(g.sum(p))
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        modalities: 2,
        width: 4,
        depth: 2,
        slots: 3,
        proj_dim: 3,
        use_prior: true,
    }
}

/// Model parameters (including the seg head) as a flat input list.
fn model_inputs(cfg: &ModelConfig, seed: u64) -> (Vec<String>, Vec<Tensor>) {
    let mut specs = model_specs(cfg);
    specs.extend(seg_head_specs(cfg));
    let store = ParamStore::init(&specs, seed, "gradcheck");
    // Perturb zero-initialised tensors so every path is exercised.
    let mut rng = rng_for(seed, "gradcheck-bias", 0);
    store
        .iter()
        .map(|(k, t)| {
            let t = if t.data().iter().all(|&v| v == 0.0) {
                let data = (0..t.len()).map(|_| rng.random_range(-0.3..0.3)).collect();
                Tensor::new(t.shape().to_vec(), data).expect("shape")
            } else {
                t.clone()
            };
            (k.clone(), t)
        })
        .unzip()
}

fn bind(names: &[String], vars: &[Var]) -> Bound {
    Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()))
}

/// Run one registered target.
pub fn gradcheck(target: &str, seed: u64) -> Result<GradcheckOutcome> {
    let mut inst = Instance {
        rng: rng_for(seed, target, 0),
    };
    let outcome = |r: (f64, f64, usize)| GradcheckOutcome {
        target: target.to_string(),
        seed,
        max_rel_err: r.0,
        max_abs_err: r.1,
        checked: r.2,
        skipped: None,
    };
    let cfg = tiny_model();
    let dims = [cfg.modalities, 4, 4, 4];
    let r = match target {
        "contrastive_loss" => {
            let inputs: Vec<Tensor> = (0..4).map(|_| inst.tensor(&[5], 1.0)).collect();
            check_with(
                |g, v| {
                    let n: Vec<Var> = v.iter().map(|&x| g.l2_normalize(x)).collect::<std::result::Result<_, _>>()?;
                    losses::contrastive_loss(g, n[0], n[1], &n[2..], 0.5)
                },
                &inputs,
            )?
        }
        "invariance_loss" => {
            let inputs = [inst.tensor(&[2, 2, 2, 2], 1.0), inst.tensor(&[2, 2, 2, 2], 1.0)];
            check_with(|g, v| losses::invariance_loss(g, v[0], v[1]), &inputs)?
        }
        "sequential_mean_update" => {
            let inputs: Vec<Tensor> = (0..3).map(|_| inst.tensor(&[2, 2, 2], 1.0)).collect();
            let w = inst.tensor(&[2, 2, 2], 1.0);
            check_with(
                |g, v| {
                    let mut acc = None;
                    for (i, &x) in v.iter().enumerate() {
                        acc = Some(losses::sequential_mean_update(g, acc, x, i, false)?);
                    }
                    weighted_sum(g, acc.expect("non-empty"), &w)
                },
                &inputs,
            )?
        }
        "equivariance_loss" => {
            let inputs = [inst.tensor(&[4], 1.0)];
            let k = RotationTransform::new(inst.rng.random_range(0..4))?;
            check_with(
                |g, v| {
                    let p = g.softmax_rows(v[0])?;
                    Ok(losses::equivariance_loss(g, p, k)?.0)
                },
                &inputs,
            )?
        }
        "equivariance_loss_clamped" => {
            let mut g = Graph::new();
            let p = g.constant(Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
            let (_, clamped) = losses::equivariance_loss(&mut g, p, RotationTransform::new(2)?)?;
            if clamped {
                return Ok(GradcheckOutcome {
                    skipped: Some("probability clamped at the true class (non-smooth point)".into()),
                    ..outcome((0.0, 0.0, 0))
                });
            }
            return Err(PuirError::precondition("clamped instance did not clamp"));
        }
        "decomposition_loss" => {
            let inputs = [inst.tensor(&[2, 2, 2, 2], 1.0), inst.tensor(&[2, 2, 2, 2], 1.0)];
            let k = RotationTransform::new(1)?;
            check_with(|g, v| losses::decomposition_loss(g, v[0], k, v[1]), &inputs)?
        }
        "dice_loss" => {
            let inputs = [inst.tensor(&[2, 2, 2, 2], 2.0)];
            let labels = Tensor::new(vec![2, 2, 2], (0..8).map(|i| f64::from(i % 3 == 0)).collect())?;
            check_with(
                |g, v| {
                    let p = model::channel_softmax(g, v[0])?;
                    let fg = g.narrow(p, 1, 1)?;
                    let fg = g.reshape(fg, &[2, 2, 2])?;
                    losses::dice_loss(g, fg, &labels)
                },
                &inputs,
            )?
        }
        "weighted_ce_loss" => {
            let inputs = [inst.tensor(&[2, 2, 2, 2], 2.0)];
            let labels: Vec<u8> = (0..8).map(|i| u8::from(i % 3 == 0)).collect();
            check_with(
                |g, v| {
                    let p = model::channel_softmax(g, v[0])?;
                    Ok(losses::weighted_ce_loss(g, p, &labels, &[0.7, 2.5])?.0)
                },
                &inputs,
            )?
        }
        "transfer_loss" => {
            let inputs = [inst.tensor(&[2, 2, 2, 2], 1.0), inst.tensor(&[2, 2, 2, 2], 1.0)];
            check_with(|g, v| losses::transfer_loss(g, v[0], v[1]), &inputs)?
        }
        "encode" | "retrieve_prior" | "fuse" | "decode" | "predict_rotation" | "project_contrastive" | "seg_head" => {
            let (names, mut inputs) = model_inputs(&cfg, seed);
            let x = inst.tensor(&dims, 1.0);
            inputs.push(x);
            let np = names.len();
            let z_shape = [cfg.width, 1, 1, 1];
            let c0 = cfg.level_channels(0);
            let c1 = cfg.level_channels(1);
            match target {
                "encode" => {
                    let wz = inst.tensor(&z_shape, 1.0);
                    let w0 = inst.tensor(&[c0, 2, 2, 2], 1.0);
                    let w1 = inst.tensor(&[c1, 1, 1, 1], 1.0);
                    check_with(
                        |g, v| {
                            let p = bind(&names, &v[..np]);
                            let e = model::encode(g, &p, &cfg, v[np])?;
                            let a = weighted_sum(g, e.final_map, &wz)?;
                            let b = weighted_sum(g, e.intermediates[0], &w0)?;
                            let c = weighted_sum(g, e.intermediates[1], &w1)?;
                            let ab = g.add(a, b)?;
                            Ok(g.add(ab, c)?)
                        },
                        &inputs,
                    )?
                }
                "retrieve_prior" => {
                    let inputs = [inst.tensor(&[4, 2, 2, 2], 1.0), inst.tensor(&[3, 4], 1.0)];
                    let w = inst.tensor(&[4, 2, 2, 2], 1.0);
                    check_with(
                        |g, v| {
                            let out = model::retrieve_prior(g, v[0], v[1])?;
                            weighted_sum(g, out, &w)
                        },
                        &inputs,
                    )?
                }
                "fuse" => {
                    let (fw, fb) = (inst.tensor(&[4, 8, 1, 1, 1], 1.0), inst.tensor(&[4], 1.0));
                    let inputs = [inst.tensor(&[4, 2, 2, 2], 1.0), inst.tensor(&[4, 2, 2, 2], 1.0), fw, fb];
                    let w = inst.tensor(&[4, 2, 2, 2], 1.0);
                    check_with(
                        |g, v| {
                            let p = Bound::from_vars([("fuse.w".to_string(), v[2]), ("fuse.b".to_string(), v[3])]);
                            let out = model::fuse(g, &p, v[0], v[1])?;
                            weighted_sum(g, out, &w)
                        },
                        &inputs,
                    )?
                }
                "decode" => {
                    // Gradient w.r.t. the fused map, both skips and every decoder parameter.
                    let mut inputs = inputs;
                    inputs.pop();
                    inputs.push(inst.tensor(&z_shape, 1.0));
                    inputs.push(inst.tensor(&[c0, 2, 2, 2], 1.0));
                    inputs.push(inst.tensor(&[c1, 1, 1, 1], 1.0));
                    let w = inst.tensor(&dims, 1.0);
                    check_with(
                        |g, v| {
                            let p = bind(&names, &v[..np]);
                            let out = model::decode(g, &p, &cfg, v[np], &[v[np + 1], v[np + 2]])?;
                            weighted_sum(g, out, &w)
                        },
                        &inputs,
                    )?
                }
                "predict_rotation" => {
                    let inputs = [inst.tensor(&[4, 2, 2, 2], 1.0), inst.tensor(&[4, 4], 1.0), inst.tensor(&[4], 1.0)];
                    let w = inst.tensor(&[4], 1.0);
                    check_with(
                        |g, v| {
                            let p = Bound::from_vars([("rot.w".to_string(), v[1]), ("rot.b".to_string(), v[2])]);
                            let out = model::predict_rotation(g, &p, v[0])?;
                            weighted_sum(g, out, &w)
                        },
                        &inputs,
                    )?
                }
                "project_contrastive" => {
                    let inputs = [inst.tensor(&[4, 2, 2, 2], 1.0), inst.tensor(&[3, 4], 1.0), inst.tensor(&[3], 1.0)];
                    let w = inst.tensor(&[3], 1.0);
                    check_with(
                        |g, v| {
                            let p = Bound::from_vars([("proj.w".to_string(), v[1]), ("proj.b".to_string(), v[2])]);
                            let out = model::project_contrastive(g, &p, v[0])?;
                            weighted_sum(g, out, &w)
                        },
                        &inputs,
                    )?
                }
                _ => {
                    let inputs = [inst.tensor(&[2, 2, 2, 2], 1.0), inst.tensor(&[2, 2, 1, 1, 1], 1.0), inst.tensor(&[2], 1.0)];
                    let w = inst.tensor(&[2, 2, 2, 2], 1.0);
                    check_with(
                        |g, v| {
                            let p = Bound::from_vars([("seg.w".to_string(), v[1]), ("seg.b".to_string(), v[2])]);
                            let out = model::seg_probs(g, &p, v[0])?;
                            weighted_sum(g, out, &w)
                        },
                        &inputs,
                    )?
                }
            }
        }
        other => return Err(PuirError::precondition(format!("unknown gradcheck target `{other}` (known: {})", TARGETS.join(", ")))),
    };
    Ok(outcome(r))
}
