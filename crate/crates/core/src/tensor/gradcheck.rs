use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst relative error
/// `|g_auto - g_fd| / max(1e-8, |g_auto| + |g_fd|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad(true));
    let out = f(&mut tape, xv)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::Dimension(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.shape(out)
        )));
    }
    let auto = tape.backward(out)?.wrt(xv).into_data();

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst: f64 = 0.0;
    for (i, &g_auto) in auto.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        // divide by the step actually taken after rounding
        let step = plus.data()[i] - minus.data()[i];
        let g_fd = (eval(plus)? - eval(minus)?) / step;
        let err = (g_auto - g_fd).abs() / (g_auto.abs() + g_fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range(-1.5, 1.5)).collect()).expect("shape matches")
}

/// Contracts an arbitrary tensor to a scalar with fixed random weights so
/// that every output component contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::new(seed);
    let w = random(&mut rng, tape.shape(y));
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

/// Name, input shape and a scalar function of that input.
pub type OpCase = (&'static str, Vec<usize>, Box<dyn Fn(&mut Tape, Var) -> Result<Var>>);

/// Every differentiable op wrapped into a scalar function of one input.
pub fn op_cases() -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    cases.push((
        "matmul",
        vec![3, 4],
        Box::new(|t, x| {
            let w = t.constant(random(&mut Rng::new(1), &[4, 2]));
            let y = t.matmul(x, w)?;
            let y2 = t.transpose(x, &[1, 0])?;
            let z = t.matmul(y2, y)?;
            weighted_sum(t, z, 2)
        }),
    ));
    cases.push((
        "batch_matmul",
        vec![2, 3, 4],
        Box::new(|t, x| {
            let w = t.constant(random(&mut Rng::new(1), &[2, 4, 3]));
            let y = t.batch_matmul(x, w)?;
            let z = t.batch_matmul(y, x)?;
            weighted_sum(t, z, 2)
        }),
    ));
    cases.push((
        "add_mul_scale",
        vec![2, 5],
        Box::new(|t, x| {
            let c = t.constant(random(&mut Rng::new(4), &[2, 5]));
            let a = t.add(x, c)?;
            let m = t.mul(a, x)?;
            let s = t.scale(m, -0.7);
            weighted_sum(t, s, 3)
        }),
    ));
    cases.push((
        "add_bias",
        vec![5],
        Box::new(|t, b| {
            let x = t.constant(random(&mut Rng::new(4), &[3, 5]));
            let y = t.add_bias(x, b)?;
            let y2 = t.mul(y, y)?;
            weighted_sum(t, y2, 3)
        }),
    ));
    cases.push(("gelu", vec![4, 3], Box::new(|t, x| {
        let y = t.gelu(x);
        weighted_sum(t, y, 5)
    })));
    cases.push(("relu", vec![4, 3], Box::new(|t, x| {
        let y = t.relu(x);
        weighted_sum(t, y, 5)
    })));
    cases.push((
        "reshape_transpose",
        vec![2, 3, 4],
        Box::new(|t, x| {
            let r = t.reshape(x, &[6, 4])?;
            let p = t.transpose(r, &[1, 0])?;
            let q = t.reshape(p, &[4, 3, 2])?;
            let s = t.transpose(q, &[2, 0, 1])?;
            weighted_sum(t, s, 6)
        }),
    ));
    cases.push((
        "concat_slice",
        vec![3, 4],
        Box::new(|t, x| {
            let a = t.slice(x, 1, 1, 3)?;
            let b = t.slice(x, 0, 0, 2)?;
            let bt = t.transpose(b, &[1, 0])?;
            let c = t.concat(&[a, x, a], 1)?;
            let d = t.concat(&[bt, bt], 0)?;
            let l1 = weighted_sum(t, c, 7)?;
            let l2 = weighted_sum(t, d, 8)?;
            t.add(l1, l2)
        }),
    ));
    cases.push(("mean_sum", vec![3, 3], Box::new(|t, x| {
        let sq = t.mul(x, x)?;
        let m = t.mean(sq);
        let s = t.sum(x);
        let p = t.mul(m, s)?;
        Ok(p)
    })));
    cases.push((
        "softmax",
        vec![3, 4],
        Box::new(|t, x| {
            let a = t.softmax(x, 0)?;
            let b = t.softmax(x, 1)?;
            let l1 = weighted_sum(t, a, 9)?;
            let l2 = weighted_sum(t, b, 10)?;
            t.add(l1, l2)
        }),
    ));
    cases.push((
        "masked_softmax",
        vec![3, 5],
        Box::new(|t, x| {
            let y = t.masked_softmax(x, &[true, false, true, true, false])?;
            weighted_sum(t, y, 11)
        }),
    ));
    cases.push((
        "layer_norm_input",
        vec![3, 6],
        Box::new(|t, x| {
            let g = t.constant(random(&mut Rng::new(12), &[6]));
            let b = t.constant(random(&mut Rng::new(13), &[6]));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            weighted_sum(t, y, 14)
        }),
    ));
    cases.push((
        "layer_norm_affine",
        vec![6],
        Box::new(|t, g| {
            let x = t.constant(random(&mut Rng::new(12), &[3, 6]));
            let y = t.layer_norm(x, g, g, 1e-5)?;
            weighted_sum(t, y, 14)
        }),
    ));
    cases.push((
        "embedding_lookup",
        vec![5, 3],
        Box::new(|t, table| {
            let y = t.embedding_lookup(table, &[4, 0, 4, 2])?;
            weighted_sum(t, y, 15)
        }),
    ));
    cases.push((
        "softmax_cross_entropy",
        vec![8],
        Box::new(|t, x| {
            let p = t.softmax(x, 0)?;
            t.nll(p, &[3])
        }),
    ));
    cases.push((
        "nll_rows",
        vec![4, 3],
        Box::new(|t, x| {
            let p = t.softmax(x, 1)?;
            t.nll(p, &[0, 2, 1, 1])
        }),
    ));
    cases
}

/// Worst relative error per op over `trials` random inputs.
pub fn op_suite_worst_errors(trials: u64, eps: f64) -> Result<Vec<(&'static str, f64)>> {
    op_cases()
        .into_iter()
        .map(|(name, shape, f)| {
            let mut worst: f64 = 0.0;
            for trial in 0..trials {
                let mut x = random(&mut Rng::derive(trial, name), &shape);
                if name == "relu" {
                    // keep clear of the kink
                    for v in x.data_mut() {
                        if v.abs() < 1e-3 {
                            *v = 0.1;
                        }
                    }
                }
                worst = worst.max(grad_check(&f, &x, eps)?);
            }
            Ok((name, worst))
        })
        .collect()
}
