//! Shared encoder, learnable prior, fusion, conditional decoder and heads.

pub mod config;
pub mod network;
pub mod params;

pub use config::ModelConfig;
pub use network::{
    channel_softmax, decode, encode, fuse, fused_representation, predict_rotation, project_contrastive,
    replicate_channels, retrieval_weights, retrieve_prior, rotation_logits, seg_probs, EncoderOutput,
    ForwardTensors,
};
pub use params::{model_specs, seg_head_specs, Bound, Init, ParamSpec, ParamStore};

use puir_autograd::{Graph, Tensor};

use crate::Result;

/// Configuration plus parameters; the unit that checkpoints persist.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&model_specs(&config), seed, "model-init");
        Ok(Self { config, params })
    }

    pub fn has_seg_head(&self) -> bool {
        self.params.contains("seg.w")
    }

    /// Attach a freshly initialised segmentation head (no-op if present).
    pub fn ensure_seg_head(&mut self, seed: u64) {
        if self.has_seg_head() {
            return;
        }
        let head = ParamStore::init(&seg_head_specs(&self.config), seed, "seg-head-init");
        for (k, v) in head.iter() {
            self.params.insert(k, v.clone());
        }
    }

    /// Shape-check the store against the architecture.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.params.check_specs(&model_specs(&self.config))?;
        if self.has_seg_head() {
            self.params.check_specs(&seg_head_specs(&self.config))?;
        }
        Ok(())
    }

    /// Encode, retrieve, fuse and decode one `[M, D, H, W]` input.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardTensors> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let enc = encode(&mut g, &p, &self.config, xv)?;
        let fused = fused_representation(&mut g, &p, enc.final_map, self.config.use_prior)?;
        let decoded = decode(&mut g, &p, &self.config, fused, &enc.intermediates)?;
        Ok(ForwardTensors {
            z: g.value(enc.final_map).clone(),
            intermediates: enc.intermediates.iter().map(|&v| g.value(v).clone()).collect(),
            fused: g.value(fused).clone(),
            decoded: g.value(decoded).clone(),
        })
    }

    /// Decode from given fused features and skips (e.g. averaged across modalities).
    pub fn decode_from(&self, fused: &Tensor, skips: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = g.constant(fused.clone());
        let s: Vec<_> = skips.iter().map(|t| g.constant(t.clone())).collect();
        let out = decode(&mut g, &p, &self.config, f, &s)?;
        Ok(g.value(out).clone())
    }

    /// Rotation-class probabilities for one input.
    pub fn rotation_probs(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let enc = encode(&mut g, &p, &self.config, xv)?;
        let probs = predict_rotation(&mut g, &p, enc.final_map)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Rotation-class probabilities from an already computed `z`.
    pub fn rotation_probs_from_z(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let probs = predict_rotation(&mut g, &p, zv)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Foreground probability map `[D, H, W]` from decoded channels.
    pub fn seg_foreground(&self, decoded: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let d = g.constant(decoded.clone());
        let probs = seg_probs(&mut g, &p, d)?;
        let s = decoded.shape();
        Ok(Tensor::new(s[1..].to_vec(), g.value(probs).channel(1).to_vec())?)
    }
}
