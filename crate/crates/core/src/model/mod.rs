//! Encoder branches, latent fusion and task decoders.
//!
//! Parameter layout (every path is owned by exactly one component):
//!
//! ```text
//! encoder.camera.*   patch.{w,b} pos block<i>.* ln_f.*
//! encoder.depth.*    patch.{w,b} pos block<i>.* ln_f.*
//! encoder.text.*     embed pos block<i>.* ln_f.*
//! fusion.*           cls type.{camera,depth,text} block<i>.* ln_f.*
//! decoder.command.*  w b
//! decoder.seg.*      w b
//! ```

mod block;
pub mod decoders;
pub mod encoders;
pub mod fusion;
pub mod health;
pub mod input;
pub mod vocab;

pub use block::{transformer_block, BlockOutput};
pub use decoders::{cross_entropy, decode_command, decode_segmentation, seg_label_order};
pub use encoders::{embed_patches, encode_modality, patchify, tokenize_and_embed_text, TokenSequence};
pub use fusion::{arbitration_weights, fuse, AvailabilityMask, FusedLatent};
pub use health::{health_monitor, HealthEvidence, HealthStatus, ModalityHealth, RawModality};
pub use input::{prepare_frame, prepare_input, ModelInput, SensorFrame};
pub use vocab::{TextTokens, Vocab};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scene::{CommandLabel, NUM_SEG_CLASSES};
use crate::tensor::{ParamStore, Tensor};

pub const LN_EPS: f64 = 1e-5;
/// Depth values are divided by this before patch embedding.
pub const DEPTH_SCALE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Camera,
    Depth,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Camera, Modality::Depth, Modality::Text];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Camera => "camera",
            Modality::Depth => "depth",
            Modality::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality `{s}`")))
    }

    /// Parameter path prefix of this modality's encoder branch.
    pub fn prefix(self) -> String {
        format!("encoder.{}", self.name())
    }

    /// Channels per pixel for image-like modalities.
    pub fn channels(self) -> usize {
        match self {
            Modality::Camera => 3,
            Modality::Depth => 2,
            Modality::Text => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    /// Transformer blocks per encoder branch.
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    pub text_len: usize,
    pub fusion_layers: usize,
    pub mlp_hidden: usize,
    pub image_size: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 2,
            heads: 4,
            patch: 8,
            text_len: 8,
            fusion_layers: 2,
            mlp_hidden: 128,
            image_size: 32,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d={} must be a positive multiple of heads={}", self.d, self.heads));
        }
        if self.patch == 0 || !self.image_size.is_multiple_of(self.patch) {
            return bad(format!(
                "image size {} is not divisible by patch {}",
                self.image_size, self.patch
            ));
        }
        // The segmentation head maps each camera token to a 2x2 block of the label grid.
        if self.image_size / self.patch * 2 != crate::scene::LABEL_GRID {
            return bad(format!(
                "patch grid {} does not tile the 8x8 label grid in 2x2 blocks",
                self.image_size / self.patch
            ));
        }
        if self.text_len < 3 {
            return bad("text_len must leave room for BOS, one word and EOS".into());
        }
        if self.layers == 0 || self.fusion_layers == 0 || self.mlp_hidden == 0 {
            return bad("layer counts and MLP width must be positive".into());
        }
        Ok(())
    }

    pub fn patches_per_image(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Token count of a modality's sequence.
    pub fn tokens(&self, m: Modality) -> usize {
        match m {
            Modality::Camera | Modality::Depth => self.patches_per_image(),
            Modality::Text => self.text_len,
        }
    }

    pub fn patch_len(&self, m: Modality) -> usize {
        self.patch * self.patch * m.channels()
    }
}

/// `(path, shape)` for every parameter of the model, in a fixed order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d;
    let mut out = Vec::new();
    let block = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, n: usize| {
        for i in 0..n {
            let p = format!("{prefix}.block{i}");
            for (name, shape) in [
                ("ln1.gain", vec![d]),
                ("ln1.bias", vec![d]),
                ("attn.wq", vec![d, d]),
                ("attn.wk", vec![d, d]),
                ("attn.wv", vec![d, d]),
                ("attn.wo", vec![d, d]),
                ("attn.bo", vec![d]),
                ("ln2.gain", vec![d]),
                ("ln2.bias", vec![d]),
                ("mlp.w1", vec![d, cfg.mlp_hidden]),
                ("mlp.b1", vec![cfg.mlp_hidden]),
                ("mlp.w2", vec![cfg.mlp_hidden, d]),
                ("mlp.b2", vec![d]),
            ] {
                out.push((format!("{p}.{name}"), shape));
            }
        }
        out.push((format!("{prefix}.ln_f.gain"), vec![d]));
        out.push((format!("{prefix}.ln_f.bias"), vec![d]));
    };
    for m in [Modality::Camera, Modality::Depth] {
        let prefix = m.prefix();
        out.push((format!("{prefix}.patch.w"), vec![cfg.patch_len(m), d]));
        out.push((format!("{prefix}.patch.b"), vec![d]));
        out.push((format!("{prefix}.pos"), vec![cfg.tokens(m), d]));
        block(&mut out, &prefix, cfg.layers);
    }
    let prefix = Modality::Text.prefix();
    out.push((format!("{prefix}.embed"), vec![Vocab::default().len(), d]));
    out.push((format!("{prefix}.pos"), vec![cfg.text_len, d]));
    block(&mut out, &prefix, cfg.layers);
    out.push(("fusion.cls".into(), vec![1, d]));
    for m in Modality::ALL {
        out.push((format!("fusion.type.{}", m.name()), vec![d]));
    }
    block(&mut out, "fusion", cfg.fusion_layers);
    out.push(("decoder.command.w".into(), vec![d, CommandLabel::COUNT]));
    out.push(("decoder.command.b".into(), vec![CommandLabel::COUNT]));
    out.push(("decoder.seg.w".into(), vec![d, 4 * NUM_SEG_CLASSES]));
    out.push(("decoder.seg.b".into(), vec![4 * NUM_SEG_CLASSES]));
    out
}

/// Biases are zero and layer-norm gains one. Every other tensor is
/// uniform(−s, s) with `s = 1/sqrt(shape[0])`, drawn from a stream seeded
/// by `(init_seed, path)` so each tensor's values are independent of the rest.
pub fn init_params(cfg: &ModelConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for (path, shape) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data = if path.ends_with(".gain") {
            vec![1.0; n]
        } else if shape.len() == 1 {
            vec![0.0; n]
        } else {
            let s = 1.0 / (shape[0] as f64).sqrt();
            let mut rng = Rng::derive(cfg.init_seed, &path);
            (0..n).map(|_| rng.range(-s, s)).collect()
        };
        store.insert(path, Tensor::new(&shape, data)?)?;
    }
    Ok(store)
}

/// Errors unless `store` has exactly the parameters `cfg` describes.
pub fn check_params(cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    let expected = param_shapes(cfg);
    for (path, shape) in &expected {
        let t = store
            .get(path)
            .map_err(|_| Error::CheckpointMismatch(format!("missing parameter `{path}`")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "`{path}` has shape {:?}, config expects {shape:?}",
                t.shape()
            )));
        }
    }
    if store.len() != expected.len() {
        let known: std::collections::BTreeSet<&str> = expected.iter().map(|(p, _)| p.as_str()).collect();
        let extra = store.paths().find(|p| !known.contains(p)).unwrap_or("?");
        return Err(Error::CheckpointMismatch(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}
