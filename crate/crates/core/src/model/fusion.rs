use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::block::{layer_norm, row_mask};
use super::{transformer_block, Modality, ModelConfig, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Var};

/// Which modalities may contribute to fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityMask {
    pub camera: bool,
    pub depth: bool,
    pub text: bool,
}

impl Default for AvailabilityMask {
    fn default() -> Self {
        Self::all()
    }
}

impl AvailabilityMask {
    pub fn all() -> Self {
        Self {
            camera: true,
            depth: true,
            text: true,
        }
    }

    pub fn only(m: Modality) -> Self {
        Self::from_fn(|x| x == m)
    }

    pub fn without(m: Modality) -> Self {
        Self::from_fn(|x| x != m)
    }

    pub fn from_fn(f: impl Fn(Modality) -> bool) -> Self {
        Self {
            camera: f(Modality::Camera),
            depth: f(Modality::Depth),
            text: f(Modality::Text),
        }
    }

    pub fn get(&self, m: Modality) -> bool {
        match m {
            Modality::Camera => self.camera,
            Modality::Depth => self.depth,
            Modality::Text => self.text,
        }
    }

    pub fn set(&mut self, m: Modality, on: bool) {
        match m {
            Modality::Camera => self.camera = on,
            Modality::Depth => self.depth = on,
            Modality::Text => self.text = on,
        }
    }

    pub fn and(self, other: Self) -> Self {
        Self::from_fn(|m| self.get(m) && other.get(m))
    }

    pub fn any(&self) -> bool {
        self.camera || self.depth || self.text
    }
}

#[derive(Debug, Clone)]
pub struct FusedLatent {
    /// `[1 + ΣT_m, d]`; row 0 is the CLS summary, masked rows are zero.
    pub tokens: Var,
    pub spans: Vec<(Modality, Range<usize>)>,
    pub keep: Vec<bool>,
    pub available: AvailabilityMask,
    /// Final-block attention `[H, T, T]`.
    pub attention: Var,
    /// Indexed by [`Modality::index`].
    pub arbitration: [f64; 3],
}

impl FusedLatent {
    pub fn span(&self, m: Modality) -> Option<Range<usize>> {
        self.spans.iter().find(|(x, _)| *x == m).map(|(_, r)| r.clone())
    }

    pub fn cls(&self, tape: &mut Tape) -> Result<Var> {
        tape.slice(self.tokens, 0, 0, 1)
    }
}

/// Concatenates `[CLS; latents + type embeddings]` and runs the fusion
/// stack. A latent contributes only if its own `available` flag and `mask`
/// both allow it; otherwise its rows are neither keys nor outputs.
pub fn fuse(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    latents: &[TokenSequence],
    mask: AvailabilityMask,
) -> Result<FusedLatent> {
    let mut seen = AvailabilityMask::from_fn(|_| false);
    let mut available = AvailabilityMask::from_fn(|_| false);
    let mut parts = vec![tape.param(store, "fusion.cls")?];
    let mut keep = vec![true];
    let mut spans = Vec::new();
    for lat in latents {
        let m = lat.modality;
        if seen.get(m) {
            return Err(Error::Fusion(format!("modality {} given twice", m.name())));
        }
        seen.set(m, true);
        let shape = tape.shape(lat.tokens).to_vec();
        if shape.len() != 2 || shape[1] != cfg.d || shape[0] != lat.keep.len() {
            return Err(Error::Dimension(format!(
                "{} latent has shape {shape:?}, expected [{}, {}]",
                m.name(),
                lat.keep.len(),
                cfg.d
            )));
        }
        let on = lat.available && mask.get(m);
        available.set(m, on);
        let ty = tape.param(store, &format!("fusion.type.{}", m.name()))?;
        parts.push(tape.add_bias(lat.tokens, ty)?);
        let start = keep.len();
        keep.extend(lat.keep.iter().map(|&k| k && on));
        spans.push((m, start..keep.len()));
    }
    if !available.any() {
        return Err(Error::Fusion("no modality available; fusion cannot produce a latent".into()));
    }
    let mut x = tape.concat(&parts, 0)?;
    let mut attention = None;
    for i in 0..cfg.fusion_layers {
        let out = transformer_block(tape, store, cfg, &format!("fusion.block{i}"), x, &keep)?;
        x = out.out;
        attention = Some(out.attention);
    }
    x = layer_norm(tape, store, "fusion.ln_f", x)?;
    if keep.iter().any(|&k| !k) {
        let m = row_mask(tape, &keep, cfg.d)?;
        x = tape.mul(x, m)?;
    }
    let attention = attention.expect("fusion_layers >= 1");
    let mut fused = FusedLatent {
        tokens: x,
        spans,
        keep,
        available,
        attention,
        arbitration: [0.0; 3],
    };
    fused.arbitration = arbitration_weights(tape, &fused);
    Ok(fused)
}

/// CLS attention mass per modality span in the final fusion block, averaged
/// over heads and renormalized over modality tokens (the CLS self-weight is
/// excluded). Unavailable modalities score exactly 0.
pub fn arbitration_weights(tape: &Tape, fused: &FusedLatent) -> [f64; 3] {
    let a = tape.value(fused.attention);
    let (h, t) = (a.shape()[0], a.shape()[1]);
    let mut mass = [0.0; 3];
    for head in 0..h {
        let row = &a.data()[head * t * t..head * t * t + t];
        for (m, span) in &fused.spans {
            mass[m.index()] += row[span.clone()].iter().sum::<f64>() / h as f64;
        }
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        for v in &mut mass {
            *v /= total;
        }
    }
    mass
}
