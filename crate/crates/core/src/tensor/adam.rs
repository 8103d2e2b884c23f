use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
/// A missing gradient is treated as zero. Nothing is modified if any
/// gradient is non-finite.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    for (path, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(path.to_string()));
            }
        }
        if let Some((m, _)) = state.moments.get(path) {
            if m.len() != t.numel() {
                return Err(Error::Dimension(format!(
                    "optimizer state for `{path}` has {} entries, parameter has {}",
                    m.len(),
                    t.numel()
                )));
            }
        }
    }
    state.step += 1;
    let step = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(step);
    let bc2 = 1.0 - hyper.beta2.powi(step);
    for (path, t) in params.iter_mut() {
        let n = t.numel();
        let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let (m, v) = state
            .moments
            .entry(path.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let data = t.data_mut();
        for i in 0..n {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grad[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(value)).unwrap();
        s.get_mut("p").unwrap().set_grad(vec![grad]).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(0.5, 0.0);
        let mut st = AdamState::new();
        adam_step(&mut s, &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(s.get("p").unwrap().data()[0], 0.5);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut s = store(0.0, 1.0);
        let mut st = AdamState::new();
        let h = AdamHyper::default();
        adam_step(&mut s, &mut st, &h).unwrap();
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let p = s.get("p").unwrap().data()[0];
        assert!((p + h.lr / (1.0 + h.eps)).abs() < 1e-18);
        assert!((p + h.lr).abs() < 1e-10);
    }

    #[test]
    fn identical_calls_identical_results() {
        let run = || {
            let mut s = store(0.3, -0.7);
            let mut st = AdamState::new();
            for _ in 0..3 {
                adam_step(&mut s, &mut st, &AdamHyper::default()).unwrap();
            }
            (s, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_path() {
        let mut s = store(0.0, f64::NAN);
        let err = adam_step(&mut s, &mut AdamState::new(), &AdamHyper::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref p) if p == "p"));
        assert_eq!(s.get("p").unwrap().data()[0], 0.0);
    }
}
