//! Named parameter storage and initialisation.

use std::collections::BTreeMap;

use puir_autograd::{Gradients, Graph, Tensor, Var};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::{hex, ModelConfig};
use crate::seed::rng_for;
use crate::{PuirError, Result};

/// Parameter tensors keyed by module path (e.g. `enc.0.w`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Scaled { fan_in: usize, gain: f64 },
    Normal { std: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn conv(name: &str, out: usize, inp: usize, k: usize, gain: f64) -> [ParamSpec; 2] {
    [
        ParamSpec {
            name: format!("{name}.w"),
            shape: vec![out, inp, k, k, k],
            init: Init::Scaled {
                fan_in: inp * k * k * k,
                gain,
            },
        },
        ParamSpec {
            name: format!("{name}.b"),
            shape: vec![out],
            init: Init::Zeros,
        },
    ]
}

fn linear(name: &str, out: usize, inp: usize, init: Init) -> [ParamSpec; 2] {
    [
        ParamSpec {
            name: format!("{name}.w"),
            shape: vec![out, inp],
            init,
        },
        ParamSpec {
            name: format!("{name}.b"),
            shape: vec![out],
            init: Init::Zeros,
        },
    ]
}

const HE: f64 = std::f64::consts::SQRT_2;

/// Parameters of the pre-training model, in initialisation order.
pub fn model_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let ch = cfg.channels();
    let mut specs = Vec::new();
    let mut inp = cfg.modalities;
    for (l, &c) in ch.iter().enumerate() {
        specs.extend(conv(&format!("enc.{l}"), c, inp, 3, HE));
        inp = c;
    }
    specs.extend(conv("enc.bottom", cfg.width, cfg.width, 3, HE));
    specs.push(ParamSpec {
        name: "prior.slots".into(),
        shape: vec![cfg.slots, cfg.width],
        init: Init::Normal { std: 1.0 },
    });
    specs.extend(conv("fuse", cfg.width, 2 * cfg.width, 1, 1.0));
    for l in (0..cfg.depth).rev() {
        let below = if l + 1 == cfg.depth { cfg.width } else { ch[l + 1] };
        specs.extend(conv(&format!("dec.{l}"), ch[l], below + ch[l], 3, HE));
    }
    specs.extend(conv("dec.out", cfg.modalities, ch[0], 1, 1.0));
    specs.extend(linear("rot", 4, cfg.width, Init::Zeros));
    specs.extend(linear(
        "proj",
        cfg.proj_dim,
        cfg.width,
        Init::Scaled {
            fan_in: cfg.width,
            gain: 1.0,
        },
    ));
    specs
}

/// Segmentation head mapping the decoder's channels to background/foreground.
pub fn seg_head_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    conv("seg", 2, cfg.modalities, 1, 1.0).to_vec()
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draw every tensor in `specs` from one seeded stream.
    pub fn init(specs: &[ParamSpec], seed: u64, tag: &str) -> Self {
        let mut rng = rng_for(seed, tag, 0);
        let mut store = Self::new();
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Scaled { fan_in, gain } => {
                    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
                Init::Normal { std } => {
                    let normal = Normal::new(0.0, std).expect("finite std");
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
            };
            store.insert(&spec.name, Tensor::new(spec.shape.clone(), data).expect("spec shape"));
        }
        store
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| PuirError::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Verify that `specs` are present with exactly these shapes.
    pub fn check_specs(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(PuirError::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over names, shapes and the bit patterns of every value.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Put every tensor on the tape, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound into one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Bind explicitly created variables under the given names.
    pub fn from_vars(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| PuirError::Checkpoint(format!("missing parameter `{name}`")))
    }

    /// Collect gradients by parameter name; parameters off the loss path get
    /// zero gradients.
    pub fn gradients(&self, g: &Graph, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let t = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(*v)));
                (k.clone(), t)
            })
            .collect()
    }
}
