use super::block::{layer_norm, linear, row_mask};
use super::{transformer_block, Modality, ModelConfig, TextTokens, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Per-modality tokens on a tape.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub modality: Modality,
    /// `[T, d]`
    pub tokens: Var,
    pub positions: Vec<usize>,
    /// Token-level mask; false on text padding.
    pub keep: Vec<bool>,
    pub available: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_available(mut self, available: bool) -> Self {
        self.available = available;
        self
    }
}

/// Row-major non-overlapping `p×p` patches of an `h×w×c` image, each
/// flattened in (row, col, channel) order.
pub fn patchify(data: &[f64], h: usize, w: usize, c: usize, p: usize) -> Result<Tensor> {
    if data.len() != h * w * c || c == 0 {
        return Err(Error::Dimension(format!(
            "image buffer of {} values for {h}x{w}x{c}",
            data.len()
        )));
    }
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::Dimension(format!("{h}x{w} image is not divisible by patch {p}")));
    }
    let (ph, pw) = (h / p, w / p);
    let mut out = Vec::with_capacity(data.len());
    for pr in 0..ph {
        for pc in 0..pw {
            for r in pr * p..(pr + 1) * p {
                let start = (r * w + pc * p) * c;
                out.extend_from_slice(&data[start..start + p * c]);
            }
        }
    }
    Tensor::new(&[ph * pw, p * p * c], out)
}

/// Linear patch projection plus learned positions.
pub fn embed_patches(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    modality: Modality,
    patches: &Tensor,
) -> Result<TokenSequence> {
    if modality == Modality::Text {
        return Err(Error::Input("text is embedded by token lookup, not patches".into()));
    }
    let shape = patches.shape();
    let (t, len) = (shape[0], shape.get(1).copied().unwrap_or(0));
    if shape.len() != 2 || t != cfg.tokens(modality) || len != cfg.patch_len(modality) {
        return Err(Error::Dimension(format!(
            "{} patches must be [{}, {}], got {shape:?}",
            modality.name(),
            cfg.tokens(modality),
            cfg.patch_len(modality)
        )));
    }
    let prefix = modality.prefix();
    let x = tape.constant(patches.clone());
    let x = linear(tape, store, &format!("{prefix}.patch.w"), &format!("{prefix}.patch.b"), x)?;
    let pos = tape.param(store, &format!("{prefix}.pos"))?;
    let tokens = tape.add(x, pos)?;
    Ok(TokenSequence {
        modality,
        tokens,
        positions: (0..t).collect(),
        keep: vec![true; t],
        available: true,
    })
}

pub fn embed_text_tokens(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    text: &TextTokens,
) -> Result<TokenSequence> {
    if text.ids.len() != cfg.text_len || text.keep.len() != cfg.text_len {
        return Err(Error::Dimension(format!(
            "text must be padded to {} tokens, got {}",
            cfg.text_len,
            text.ids.len()
        )));
    }
    let prefix = Modality::Text.prefix();
    let table = tape.param(store, &format!("{prefix}.embed"))?;
    let x = tape.embedding_lookup(table, &text.ids)?;
    let pos = tape.param(store, &format!("{prefix}.pos"))?;
    let tokens = tape.add(x, pos)?;
    Ok(TokenSequence {
        modality: Modality::Text,
        tokens,
        positions: (0..cfg.text_len).collect(),
        keep: text.keep.clone(),
        available: true,
    })
}

pub fn tokenize_and_embed_text(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    vocab: &Vocab,
    command: &str,
) -> Result<TokenSequence> {
    let text = vocab.tokenize(command, cfg.text_len)?;
    embed_text_tokens(tape, store, cfg, &text)
}

/// Runs an embedded sequence through its branch: L blocks then a final
/// layer norm. Padding rows come out zero.
pub fn encode_modality(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    embedded: TokenSequence,
) -> Result<TokenSequence> {
    let prefix = embedded.modality.prefix();
    let mut x = embedded.tokens;
    for i in 0..cfg.layers {
        x = transformer_block(tape, store, cfg, &format!("{prefix}.block{i}"), x, &embedded.keep)?.out;
    }
    x = layer_norm(tape, store, &format!("{prefix}.ln_f"), x)?;
    if embedded.keep.iter().any(|&k| !k) {
        let mask = row_mask(tape, &embedded.keep, cfg.d)?;
        x = tape.mul(x, mask)?;
    }
    Ok(TokenSequence {
        tokens: x,
        ..embedded
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn patch_count_and_length() {
        let p = patchify(&[0.5; 64], 8, 8, 1, 4).unwrap();
        assert_eq!(p.shape(), &[4, 16]);
        assert!(p.data().iter().all(|&v| v == 0.5));
        assert!(patchify(&[0.0; 36], 6, 6, 1, 4).is_err());
    }

    #[test]
    fn flattening_order_is_row_col_channel() {
        let p = patchify(&[1.0, 2.0, 3.0, 4.0], 2, 2, 1, 2).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 4.0]);
        // 2x4x2 image, patch 2: the second patch covers columns 2..4.
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let p = patchify(&data, 2, 4, 2, 2).unwrap();
        assert_eq!(p.row(1), &[4.0, 5.0, 6.0, 7.0, 12.0, 13.0, 14.0, 15.0]);
    }

    #[test]
    fn camera_and_text_share_latent_width() {
        let cfg = ModelConfig::default();
        let store = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let img = patchify(&vec![0.3; 32 * 32 * 3], 32, 32, 3, 8).unwrap();
        let cam = embed_patches(&mut tape, &store, &cfg, Modality::Camera, &img).unwrap();
        let cam = encode_modality(&mut tape, &store, &cfg, cam).unwrap();
        assert_eq!(tape.shape(cam.tokens), &[16, 64]);
        let text = tokenize_and_embed_text(&mut tape, &store, &cfg, &Vocab::default(), "go straight").unwrap();
        let text = encode_modality(&mut tape, &store, &cfg, text).unwrap();
        assert_eq!(tape.shape(text.tokens), &[8, 64]);
        assert!(tape.value(text.tokens).row(7).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_inputs_error() {
        let cfg = ModelConfig::default();
        let store = init_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let depth = patchify(&vec![0.0; 32 * 32 * 3], 32, 32, 3, 8).unwrap();
        assert!(embed_patches(&mut tape, &store, &cfg, Modality::Depth, &depth).is_err());
        assert!(tokenize_and_embed_text(&mut tape, &store, &cfg, &Vocab::default(), "").is_err());
    }
}
