use std::collections::HashMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-defined differentiable operation.
///
/// `backward` returns one optional gradient per input, each with the
/// length of that input's data.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &[f64])
        -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Reshape(Var),
    Transpose(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    },
    Sum(Var),
    Mean(Var),
    Softmax(Var, usize),
    MaskedSoftmax(Var, Vec<bool>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding(Var, Vec<usize>),
    Nll(Var, Vec<usize>),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed after their inputs, so the node order is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }

    /// Gradient as a tensor; zeros when the node was not reached.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad matches shape"),
            None => Tensor::zeros(shape),
        }
    }
}

pub const NLL_CLAMP: f64 = 1e-12;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// da[m×k] += dc[m×n] · b[k×n]ᵀ
fn gemm_abt_acc(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = crow.iter().zip(brow).map(|(x, y)| x * y).sum();
            da[i * k + p] += dot;
        }
    }
}

/// db[k×n] += a[m×k]ᵀ · dc[m×n]
fn gemm_atb_acc(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let drow = &mut db[p * n..(p + 1) * n];
            for (d, &c) in drow.iter_mut().zip(crow) {
                *d += aip * c;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn permute_index_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            offset += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    (out_shape, map)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a leaf. Gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        let mut t = tensor;
        t.clear_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Records a constant leaf; never receives gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Leaf for a stored parameter. Repeated calls with the same path return
    /// the same node so that multiple uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(path) {
            return Ok(v);
        }
        let t = store.get(path)?.clone();
        let v = self.leaf(t.with_requires_grad(true));
        self.params.push((path.to_string(), v));
        self.param_index.insert(path.to_string(), v);
        Ok(v)
    }

    /// Parameter paths touched by this tape, in first-use order.
    pub fn param_vars(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul of {sa:?} and {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), needs))
    }

    /// Batched matmul: `[B,m,k] · [B,k,n] → [B,m,n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Dimension(format!(
                "batch_matmul of {sa:?} and {sb:?}"
            )));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..bs {
            gemm_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let t = Tensor::new(&[bs, m, n], out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::BatchMatMul(a, b), needs))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// `x[..., n] + bias[n]`, broadcasting over all leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::Dimension(format!(
                "bias {sb:?} does not match last axis of {sx:?}"
            )));
        }
        let n = sb[0];
        let b = self.data(bias);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let t = Tensor::new(sx, data)?;
        let needs = self.needs(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::Scale(x, factor), needs)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| gelu(v)).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::Gelu(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x), data).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(t, Op::Relu(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let t = Tensor::new(shape, self.data(x).to_vec())?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Axis permutation; `perm[i]` is the source axis of output axis `i`.
    pub fn transpose(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len()) {
            return Err(Error::Dimension(format!(
                "permutation {perm:?} for shape {shape:?}"
            )));
        }
        for &p in perm {
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::Dimension(format!("repeated axis in {perm:?}")));
            }
        }
        let (out_shape, map) = permute_index_map(shape, perm);
        let src = self.data(x);
        let data = map.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(&out_shape, data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Transpose(x, perm.to_vec()), needs))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!(
                "concat axis {axis} for rank {}",
                base.len()
            )));
        }
        let mut axis_len = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "concat of {base:?} and {s:?} along axis {axis}"
                )));
            }
            axis_len += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut data = Vec::with_capacity(outer * axis_len * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.data(p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_len;
        let t = Tensor::new(&shape, data)?;
        let needs = self.needs(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis), needs))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::Index(format!(
                "slice {start}..{end} on axis {axis} of {shape:?}"
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let len = end - start;
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(
            t,
            Op::Slice {
                x,
                axis,
                start,
                end,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} for shape {shape:?}"
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * dim * inner + j * inner + i;
                let max = (0..dim).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..dim {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..dim {
                    out[idx(j)] /= total;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Softmax(x, axis), needs))
    }

    /// Softmax over the last axis restricted to positions where `keep` is
    /// true. Excluded positions get probability exactly 0.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dim = *shape.last().expect("rank >= 1");
        if keep.len() != dim {
            return Err(Error::Dimension(format!(
                "mask of length {} for last axis {dim}",
                keep.len()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::Input(
                "every key is masked; attention cannot be normalized".into(),
            ));
        }
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for (row_in, row_out) in src.chunks(dim).zip(out.chunks_mut(dim)) {
            let max = row_in
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..dim {
                if keep[j] {
                    let e = (row_in[j] - max).exp();
                    row_out[j] = e;
                    total += e;
                }
            }
            for j in 0..dim {
                if keep[j] {
                    row_out[j] /= total;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::MaskedSoftmax(x, keep.to_vec()), needs))
    }

    /// Normalizes over the last axis using `1/sqrt(var + eps)`, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("rank >= 1");
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::Dimension(format!(
                "layer_norm gain {:?} / bias {:?} for input {shape:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Input(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (src, g, b) = (self.data(x), self.data(gain), self.data(bias));
        let rows = src.len() / n;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(&shape, out)?;
        let needs = self.needs(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Rows of `table[V, d]` selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "embedding table must be rank 2, got {shape:?}"
            )));
        }
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup with no ids".into()));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("id {bad} for table of {v} rows")));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[ids.len(), d], data)?;
        let needs = self.needs(&[table]);
        Ok(self.push(t, Op::Embedding(table, ids.to_vec()), needs))
    }

    /// Mean negative log-likelihood of `labels` under row distributions
    /// `probs[N, C]`, with probabilities clamped below at 1e-12.
    pub fn nll(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        let (rows, classes) = match shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::Dimension(format!(
                    "nll expects [C] or [N, C], got {shape:?}"
                )))
            }
        };
        if labels.len() != rows {
            return Err(Error::Dimension(format!(
                "{} labels for {rows} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let p = self.data(probs);
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -p[r * classes + l].max(NLL_CLAMP).ln())
            .sum();
        let needs = self.needs(&[probs]);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::Nll(probs, labels.to_vec()),
            needs,
        ))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let t = op.forward(&values)?;
        let needs = self.needs(inputs);
        Ok(self.push(t, Op::Custom(op, inputs.to_vec()), needs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Backward sweep that accumulates parameter gradients into `store`.
    /// Every parameter in `store` ends with a gradient buffer; parameters
    /// not reached by `loss` keep exactly zero.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (_, t) in store.iter_mut() {
            if t.grad().is_none() {
                t.zero_grad();
            }
        }
        for (path, var) in &self.params {
            if let Some(g) = grads.get(*var) {
                store.get_mut(path)?.accumulate_grad(g);
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, update: impl FnOnce(&mut [f64])) {
        assert!(
            var.0 < grads.len(),
            "tape input must precede its consumer"
        );
        if !self.nodes[var.0].needs_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
        update(slot);
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| gemm_abt_acc(g, db, ga, m, k, n));
                self.accumulate(grads, *b, |gb| gemm_atb_acc(da, g, gb, m, k, n));
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (da, db) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| {
                    for i in 0..bs {
                        gemm_abt_acc(
                            &g[i * m * n..(i + 1) * m * n],
                            &db[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..bs {
                        gemm_atb_acc(
                            &da[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |gv| {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    });
                }
            }
            Op::AddBias(x, bias) => {
                let n = self.shape(*bias)[0];
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
                self.accumulate(grads, *bias, |gb| {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * db[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * da[i];
                    }
                });
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * f)
                });
            }
            Op::Gelu(x) => {
                let dx = self.data(*x);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * gelu_grad(dx[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let dx = self.data(*x);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if dx[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
            }
            Op::Transpose(x, perm) => {
                let (_, map) = permute_index_map(self.shape(*x), perm);
                self.accumulate(grads, *x, |gx| {
                    for (o, &src) in map.iter().enumerate() {
                        gx[src] += g[o];
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let out_shape = out.shape();
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let total_block = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = self.shape(p)[*axis] * inner;
                    self.accumulate(grads, p, |gp| {
                        for o in 0..outer {
                            let src = &g[o * total_block + offset..o * total_block + offset + block];
                            gp[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                end,
            } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let len = end - start;
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * len * inner;
                        gx[dst..dst + len * inner]
                            .iter_mut()
                            .zip(&g[src..src + len * inner])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::Softmax(x, axis) => {
                let (outer, dim, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| o * dim * inner + j * inner + i;
                            let dot: f64 = (0..dim).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..dim {
                                gx[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax(x, keep) => {
                let dim = keep.len();
                let y = out.data();
                self.accumulate(grads, *x, |gx| {
                    for ((gr, yr), gxr) in g.chunks(dim).zip(y.chunks(dim)).zip(gx.chunks_mut(dim)) {
                        let dot: f64 = (0..dim).filter(|&j| keep[j]).map(|j| gr[j] * yr[j]).sum();
                        for j in 0..dim {
                            if keep[j] {
                                gxr[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.shape(*gain)[0];
                let gv = self.data(*gain);
                let rows = xhat.len() / n;
                self.accumulate(grads, *x, |gx| {
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        let scale = inv_std[r] / n as f64;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            gx[r * n + j] += scale * (n as f64 * d - sum_d - hr[j] * sum_dh);
                        }
                    }
                });
                self.accumulate(grads, *gain, |gg| {
                    for (i, v) in g.iter().enumerate() {
                        gg[i % n] += v * xhat[i];
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                });
            }
            Op::Embedding(table, ids) => {
                let d = self.shape(*table)[1];
                self.accumulate(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Nll(probs, labels) => {
                let classes = *self.shape(*probs).last().expect("rank >= 1");
                let p = self.data(*probs);
                let rows = labels.len() as f64;
                self.accumulate(grads, *probs, |gp| {
                    for (r, &l) in labels.iter().enumerate() {
                        let i = r * classes + l;
                        if p[i] >= NLL_CLAMP {
                            gp[i] -= g[0] / (rows * p[i]);
                        }
                    }
                });
            }
            Op::Custom(op, inputs) => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let input_grads = op.backward(&values, out, g);
                if input_grads.len() != inputs.len() {
                    return Err(Error::Dimension(format!(
                        "custom op `{}` returned {} gradients for {} inputs",
                        op.name(),
                        input_grads.len(),
                        inputs.len()
                    )));
                }
                for (v, ig) in inputs.iter().zip(input_grads) {
                    if let Some(ig) = ig {
                        self.accumulate(grads, *v, |gv| {
                            gv.iter_mut().zip(&ig).for_each(|(a, b)| *a += b)
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
