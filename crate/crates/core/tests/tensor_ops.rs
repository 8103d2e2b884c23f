use ffusion::rng::Rng;
use ffusion::tensor::{grad_check, op_suite_worst_errors, CustomOp, ParamStore, Tape, Tensor, Var};
use ffusion::{Error, Result};

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range(-1.5, 1.5)).collect()).unwrap()
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

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::eye(2));
    let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let out = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let col = tape.constant(Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
    let out = tape.matmul(m, col).unwrap();
    assert_eq!(tape.shape(out), &[2, 1]);
    assert_eq!(tape.value(out).data(), &[17.0, 39.0]);

    let row = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let err = tape.matmul(row, row).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(msg.contains("[1, 2]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    for c in [-3.0, 0.0, 7.5] {
        let x = tape.constant(Tensor::filled(&[3], c));
        let y = tape.softmax(x, 0).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    let x = tape.constant(Tensor::new(&[2], vec![0.0, 2f64.ln()]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] - 1.0 / 3.0).abs() < 1e-15 && (d[1] - 2.0 / 3.0).abs() < 1e-15);

    let x = tape.constant(Tensor::new(&[2], vec![1000.0, 0.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] - 1.0).abs() < 1e-12 && d[1] < 1e-12);

    assert!(tape.softmax(x, 1).is_err());
}

#[test]
fn softmax_slices_sum_to_one_over_wide_range() {
    let mut rng = Rng::new(11);
    let mut tape = Tape::new();
    for trial in 0..20 {
        let shape = [3, 5, 4];
        let n = 60;
        let data = (0..n).map(|_| rng.range(-1e3, 1e3)).collect();
        let x = tape.constant(Tensor::new(&shape, data).unwrap());
        let axis = trial % 3;
        let y = tape.softmax(x, axis).unwrap();
        let v = tape.value(y);
        let (outer, dim, inner) = match axis {
            0 => (1, 3, 20),
            1 => (3, 5, 4),
            _ => (15, 4, 1),
        };
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..dim).map(|j| v.data()[o * dim * inner + j * inner + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(v.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::ones(&[2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(Tensor::filled(&[1, 2], 3.0));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

    let x = tape.constant(Tensor::new(&[1, 2], vec![1.0, 3.0]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-14).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);

    let g0 = tape.constant(Tensor::zeros(&[2]));
    let bias = tape.constant(Tensor::new(&[2], vec![0.25, -4.0]).unwrap());
    let y = tape.layer_norm(x, g0, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25, -4.0]);

    assert!(tape.layer_norm(x, g, b, 0.0).is_err());
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = Rng::new(5);
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::ones(&[16]));
    let b = tape.constant(Tensor::zeros(&[16]));
    let x = tape.constant(random(&mut rng, &[6, 16]));
    let eps = 1e-5;
    let y = tape.layer_norm(x, g, b, eps).unwrap();
    for r in 0..6 {
        let row = tape.value(y).row(r);
        let input = tape.value(x).row(r);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| v * v).sum::<f64>() / 16.0;
        let in_mean = input.iter().sum::<f64>() / 16.0;
        let in_var = input.iter().map(|v| (v - in_mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-9);
        // Variance is exactly var/(var+eps) because eps enters under the root.
        assert!((var - in_var / (in_var + eps)).abs() < 1e-9);
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let g = tape.gelu(z);
    assert_eq!(tape.value(g).data(), &[0.0]);

    let ones = tape.constant(Tensor::ones(&[2, 3]));
    let s = tape.sum(ones);
    assert_eq!(tape.value(s).data(), &[6.0]);

    let table = tape.constant(
        Tensor::new(&[4, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap(),
    );
    let row = tape.embedding_lookup(table, &[3]).unwrap();
    assert_eq!(tape.value(row).data(), &[6.0, 7.0]);
    assert!(matches!(
        tape.embedding_lookup(table, &[4]),
        Err(Error::Index(_))
    ));

    let a = tape.constant(Tensor::ones(&[2, 2]));
    let b = tape.constant(Tensor::ones(&[2, 3]));
    assert!(tape.add(a, b).is_err());
    assert!(tape.mul(a, b).is_err());
    assert!(tape.slice(b, 1, 2, 4).is_err());
    assert!(tape.reshape(b, &[5]).is_err());
    assert!(tape.concat(&[a, b], 0).is_err());
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.shape(c), &[2, 5]);
}

#[test]
fn transpose_and_slice_semantics() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let t = tape.transpose(x, &[1, 0]).unwrap();
    assert_eq!(tape.shape(t), &[3, 2]);
    assert_eq!(tape.value(t).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    let s = tape.slice(x, 1, 1, 3).unwrap();
    assert_eq!(tape.value(s).data(), &[2.0, 3.0, 5.0, 6.0]);
    let y = tape.constant(Tensor::new(&[2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
    let p = tape.transpose(y, &[1, 2, 0]).unwrap();
    assert_eq!(tape.shape(p), &[3, 2, 2]);
    assert_eq!(tape.value(p).at(&[2, 1, 0]), tape.value(y).at(&[0, 2, 1]));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2, 3], vec![0.5; 6]).unwrap().with_requires_grad(true));
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).data(), &[1.0; 6]);

    // xᵀx at x = [1, 2]
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap().with_requires_grad(true));
    let xt = tape.transpose(x, &[1, 0]).unwrap();
    let q = tape.matmul(xt, x).unwrap();
    let g = tape.backward(q).unwrap();
    assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);

    // disconnected parameter
    let mut store = ParamStore::new();
    store.insert("used", Tensor::ones(&[2])).unwrap();
    store.insert("unused", Tensor::ones(&[2])).unwrap();
    let mut tape = Tape::new();
    let u = tape.param(&store, "used").unwrap();
    let _ = tape.param(&store, "unused").unwrap();
    let l = tape.sum(u);
    tape.backward_into(l, &mut store).unwrap();
    assert_eq!(store.get("unused").unwrap().grad().unwrap(), &[0.0, 0.0]);
    assert_eq!(store.get("used").unwrap().grad().unwrap(), &[1.0, 1.0]);

    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::ones(&[3]).with_requires_grad(true));
    assert!(matches!(tape.backward(v), Err(Error::Dimension(_))));
}

#[test]
fn two_uses_accumulate_twice_the_gradient() {
    let mut rng = Rng::new(3);
    let x0 = random(&mut rng, &[3, 4]);
    let single = {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone().with_requires_grad(true));
        let l = weighted_sum(&mut tape, x, 9).unwrap();
        tape.backward(l).unwrap().wrt(x)
    };
    let double = {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.with_requires_grad(true));
        let a = weighted_sum(&mut tape, x, 9).unwrap();
        let b = weighted_sum(&mut tape, x, 9).unwrap();
        let l = tape.add(a, b).unwrap();
        tape.backward(l).unwrap().wrt(x)
    };
    for (s, d) in single.data().iter().zip(double.data()) {
        assert_eq!(2.0 * s, *d);
    }
}

#[test]
fn param_reuse_shares_one_node() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(&[2], vec![1.0, 3.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let a = tape.param(&store, "w").unwrap();
    let b = tape.param(&store, "w").unwrap();
    assert_eq!(a, b);
    let p = tape.mul(a, b).unwrap();
    let l = tape.sum(p);
    tape.backward_into(l, &mut store).unwrap();
    assert_eq!(store.get("w").unwrap().grad().unwrap(), &[2.0, 6.0]);
}

#[test]
fn every_op_passes_grad_check_on_ten_random_inputs() {
    let results = op_suite_worst_errors(10, 1e-6).unwrap();
    assert!(results.len() >= 15);
    for (name, err) in results {
        assert!(err < 1e-5, "{name}: relative error {err:e}");
    }
}

#[test]
fn grad_check_of_sum_is_exact() {
    // Dyadic inputs and a power-of-two step keep every sum exact.
    let x = Tensor::new(&[4, 4], (0..16).map(|i| f64::from(i - 8) / 8.0).collect()).unwrap();
    let err = grad_check(|t, x| Ok(t.sum(x)), &x, 2f64.powi(-20)).unwrap();
    assert_eq!(err, 0.0);
    let x = random(&mut Rng::new(0), &[4, 4]);
    let err = grad_check(|t, x| Ok(t.sum(x)), &x, 1e-6).unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn grad_check_rejects_non_scalar() {
    let x = Tensor::ones(&[3]);
    assert!(grad_check(|t, x| Ok(t.gelu(x)), &x, 1e-6).is_err());
}

/// Squares its input but reports derivative `x` instead of `2x`.
struct BrokenSquare;

impl CustomOp for BrokenSquare {
    fn name(&self) -> &str {
        "broken_square"
    }
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        Tensor::new(x.shape(), x.data().iter().map(|v| v * v).collect())
    }
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(inputs[0].data().iter().zip(g).map(|(x, g)| x * g).collect())]
    }
}

#[test]
fn grad_check_catches_broken_backward_rule() {
    let x = random(&mut Rng::new(21), &[6]);
    let err = grad_check(
        |t, x| {
            let y = t.custom(Box::new(BrokenSquare), &[x])?;
            Ok(t.sum(y))
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err > 1e-2, "negative control not detected: {err}");
}

#[test]
fn ops_are_bit_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(random(&mut Rng::new(77), &[4, 6]).with_requires_grad(true));
        let y = tape.softmax(x, 1).unwrap();
        let g = tape.constant(Tensor::ones(&[6]));
        let b = tape.constant(Tensor::zeros(&[6]));
        let z = tape.layer_norm(y, g, b, 1e-5).unwrap();
        let l = weighted_sum(&mut tape, z, 1).unwrap();
        let grads = tape.backward(l).unwrap();
        (tape.value(l).data()[0].to_bits(), grads.wrt(x).into_data())
    };
    assert_eq!(run(), run());
}
