use super::{ModelConfig, LN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct BlockOutput {
    /// `[T, d]`; rows at masked positions are exactly zero.
    pub out: Var,
    /// `[H, T, T]` attention probabilities (query-major).
    pub attention: Var,
}

pub(crate) fn layer_norm(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let g = tape.param(store, &format!("{prefix}.gain"))?;
    let b = tape.param(store, &format!("{prefix}.bias"))?;
    tape.layer_norm(x, g, b, LN_EPS)
}

pub(crate) fn linear(tape: &mut Tape, store: &ParamStore, w: &str, b: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, w)?;
    let b = tape.param(store, b)?;
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Constant `[T, d]` with ones on kept rows and zeros on masked rows.
pub(crate) fn row_mask(tape: &mut Tape, keep: &[bool], d: usize) -> Result<Var> {
    let data = keep
        .iter()
        .flat_map(|&k| std::iter::repeat_n(if k { 1.0 } else { 0.0 }, d))
        .collect();
    Ok(tape.constant(Tensor::new(&[keep.len(), d], data)?))
}

/// Pre-norm block `x + MHA(LN(x))` then `+ MLP(LN(·))`. Masked positions
/// are excluded as keys and their output rows are zeroed.
pub fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
    keep: &[bool],
) -> Result<BlockOutput> {
    let shape = tape.shape(x).to_vec();
    let (t, d) = match shape.as_slice() {
        &[t, d] => (t, d),
        _ => return Err(Error::Dimension(format!("block input must be [T, d], got {shape:?}"))),
    };
    if d != cfg.d || keep.len() != t {
        return Err(Error::Dimension(format!(
            "block expects [T, {}] with T mask entries, got {shape:?} and {} entries",
            cfg.d,
            keep.len()
        )));
    }
    let (h, dh) = (cfg.heads, cfg.head_dim());
    let a = layer_norm(tape, store, &format!("{prefix}.ln1"), x)?;
    let mut heads = |name: &str, perm: &[usize]| -> Result<Var> {
        let w = tape.param(store, &format!("{prefix}.attn.{name}"))?;
        let p = tape.matmul(a, w)?;
        let p = tape.reshape(p, &[t, h, dh])?;
        tape.transpose(p, perm)
    };
    let q = heads("wq", &[1, 0, 2])?;
    let k = heads("wk", &[1, 2, 0])?;
    let v = heads("wv", &[1, 0, 2])?;
    let scores = tape.batch_matmul(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let attention = tape.masked_softmax(scores, keep)?;
    let o = tape.batch_matmul(attention, v)?;
    let o = tape.transpose(o, &[1, 0, 2])?;
    let o = tape.reshape(o, &[t, d])?;
    let o = linear(tape, store, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"), o)?;
    let x1 = tape.add(x, o)?;
    let m = layer_norm(tape, store, &format!("{prefix}.ln2"), x1)?;
    let m = linear(tape, store, &format!("{prefix}.mlp.w1"), &format!("{prefix}.mlp.b1"), m)?;
    let m = tape.gelu(m);
    let m = linear(tape, store, &format!("{prefix}.mlp.w2"), &format!("{prefix}.mlp.b2"), m)?;
    let mut out = tape.add(x1, m)?;
    if keep.iter().any(|&k| !k) {
        let mask = row_mask(tape, keep, d)?;
        out = tape.mul(out, mask)?;
    }
    Ok(BlockOutput { out, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::rng::Rng;

    fn setup() -> (ModelConfig, ParamStore) {
        let cfg = ModelConfig::default();
        let store = init_params(&cfg).unwrap();
        (cfg, store)
    }

    fn random_tokens(t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::new(&[t, d], (0..t * d).map(|_| rng.normal()).collect()).unwrap()
    }

    const P: &str = "fusion.block0";

    #[test]
    fn single_token_attends_to_itself() {
        let (cfg, store) = setup();
        let mut tape = Tape::new();
        let x = tape.constant(random_tokens(1, 64, 1));
        let out = transformer_block(&mut tape, &store, &cfg, P, x, &[true]).unwrap();
        assert!(tape.value(out.attention).data().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let (cfg, store) = setup();
        let row = random_tokens(1, 64, 2);
        let x = Tensor::new(&[5, 64], row.data().repeat(5)).unwrap();
        let keep = [true, true, false, true, true];
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let out = transformer_block(&mut tape, &store, &cfg, P, x, &keep).unwrap();
        for row in tape.value(out.attention).data().chunks(5) {
            for (j, &a) in row.iter().enumerate() {
                let want = if keep[j] { 0.25 } else { 0.0 };
                assert!((a - want).abs() < 1e-12);
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(tape.value(out.out).row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_key_equals_reduced_sequence() {
        let (cfg, store) = setup();
        let full = random_tokens(2, 64, 3);
        let mut tape = Tape::new();
        let x = tape.constant(full.clone());
        let masked = transformer_block(&mut tape, &store, &cfg, P, x, &[true, false]).unwrap();
        let one = tape.constant(Tensor::new(&[1, 64], full.row(0).to_vec()).unwrap());
        let reduced = transformer_block(&mut tape, &store, &cfg, P, one, &[true]).unwrap();
        let a = tape.value(masked.out).row(0).to_vec();
        let b = tape.value(reduced.out).row(0);
        let dev = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-9, "{dev}");
    }

    #[test]
    fn fully_masked_keys_error() {
        let (cfg, store) = setup();
        let mut tape = Tape::new();
        let x = tape.constant(random_tokens(2, 64, 4));
        assert!(transformer_block(&mut tape, &store, &cfg, P, x, &[false, false]).is_err());
    }
}
