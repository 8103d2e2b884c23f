//! Task heads. Both read only the fused latent.

use super::block::linear;
use super::{FusedLatent, Modality, ModelConfig};
use crate::error::{Error, Result};
use crate::scene::{CommandLabel, LABEL_GRID, NUM_SEG_CLASSES};
use crate::tensor::{ParamStore, Tape, Tensor, Var, NLL_CLAMP};

/// Distribution over the four commands from the CLS token, shape `[4]`.
pub fn decode_command(tape: &mut Tape, store: &ParamStore, fused: &FusedLatent) -> Result<Var> {
    let cls = fused.cls(tape)?;
    let logits = linear(tape, store, "decoder.command.w", "decoder.command.b", cls)?;
    let logits = tape.reshape(logits, &[CommandLabel::COUNT])?;
    tape.softmax(logits, 0)
}

/// For grid cell `g` (row-major over the 8×8 label grid), the row of the
/// token-major head output `[T·4, C]` that predicts it. Camera token `t`
/// covers the 2×2 cell block at `(2·(t / G), 2·(t % G))`, sub-cells in
/// row-major order.
pub fn seg_label_order(cfg: &ModelConfig) -> Vec<usize> {
    let g = cfg.image_size / cfg.patch;
    (0..LABEL_GRID * LABEL_GRID)
        .map(|cell| {
            let (r, c) = (cell / LABEL_GRID, cell % LABEL_GRID);
            let token = (r / 2) * g + c / 2;
            token * 4 + (r % 2) * 2 + c % 2
        })
        .collect()
}

/// Per-cell class distributions `[64, 4]` in grid order. Each camera-span
/// token is mapped to 4 cells × 4 classes by one linear layer. Without a
/// camera span the head sees zero tokens.
pub fn decode_segmentation(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    fused: &FusedLatent,
) -> Result<Var> {
    let t = cfg.tokens(Modality::Camera);
    let cam = match fused.span(Modality::Camera) {
        Some(span) => tape.slice(fused.tokens, 0, span.start, span.end)?,
        None => tape.constant(Tensor::zeros(&[t, cfg.d])),
    };
    let logits = linear(tape, store, "decoder.seg.w", "decoder.seg.b", cam)?;
    let logits = tape.reshape(logits, &[t * 4, NUM_SEG_CLASSES])?;
    let logits = tape.embedding_lookup(logits, &seg_label_order(cfg))?;
    tape.softmax(logits, 1)
}

/// `−ln(max(pred[label], 1e-12))`.
pub fn cross_entropy(pred: &[f64], label: usize) -> Result<f64> {
    let p = pred.get(label).ok_or_else(|| {
        Error::Index(format!("label {label} out of range for {} classes", pred.len()))
    })?;
    Ok(-p.max(NLL_CLAMP).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&[1.0, 0.0, 0.0, 0.0], 0).unwrap().abs() < 1e-12);
        assert!((cross_entropy(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.0, 1.0], 0).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(cross_entropy(&[0.25; 4], 7).is_err());
    }

    #[test]
    fn label_order_is_a_permutation() {
        let mut order = seg_label_order(&ModelConfig::default());
        assert_eq!(order[0], 0);
        assert_eq!(order[1], 1);
        assert_eq!(order[2], 4);
        assert_eq!(order[8], 2);
        order.sort_unstable();
        assert_eq!(order, (0..64).collect::<Vec<_>>());
    }
}
