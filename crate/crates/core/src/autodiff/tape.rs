//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. Inputs always precede their consumers, so a reverse sweep
//! over node indices visits each node once, after every node that read it.

use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{Tensor, COSINE_EPS};
use crate::error::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    CosineRows(Var),
    RepeatRows(Var),
    RepeatCols(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    LayerNorm { x: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Records a leaf. Gradients are only tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable parameter. Repeated calls with the same id return
    /// the same node, so every use contributes to one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.leaf(store.value(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.value(a).dims2()?;
        let (k2, c) = self.value(b).dims2()?;
        if k != k2 || self.value(a).shape().len() != 2 || self.value(b).shape().len() != 2 {
            return Err(TensorError::Dimension(format!(
                "matmul of {:?} by {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), r, k, c);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    // ---- elementwise ---------------------------------------------------

    fn broadcast_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.is_scalar() {
            Ok(sa.shape().to_vec())
        } else if sa.is_scalar() {
            Ok(sb.shape().to_vec())
        } else {
            Err(TensorError::Dimension(format!(
                "{what} of incompatible shapes {:?} and {:?}",
                sa.shape(),
                sb.shape()
            )))
        }
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, what)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let out: Vec<f64> = (0..n)
            .map(|i| f(da[if da.len() == 1 { 0 } else { i }], db[if db.len() == 1 { 0 } else { i }]))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * k).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()), Op::Gelu(a))
    }

    // ---- normalisation and losses --------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    sum += e;
                }
                for k in 0..len {
                    out[idx(k)] /= sum;
                }
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// `-log softmax(logits)[target]` over a flat logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if target >= t.numel() {
            return Err(TensorError::Index(format!(
                "target {target} out of range for {} logits",
                t.numel()
            )));
        }
        let probs = super::tensor::softmax_slice(t.data());
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - t.data()[target];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }, rg))
    }

    /// Pairwise cosine similarity between the rows of an `r×c` matrix.
    pub fn cosine_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let norms = row_norms(src, r, c);
        let mut out = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                let dot: f64 = (0..c).map(|k| src[i * c + k] * src[j * c + k]).sum();
                out[i * r + j] = dot / (norms[i] * norms[j] + COSINE_EPS);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r, r], out)?, Op::CosineRows(x), rg))
    }

    /// Cosine similarity of two vectors as a one-element node.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).numel();
        if d == 0 || self.value(b).numel() != d {
            return Err(TensorError::Dimension(format!(
                "cosine of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let ra = self.reshape(a, vec![1, d])?;
        let rb = self.reshape(b, vec![1, d])?;
        let both = self.concat_rows(&[ra, rb])?;
        let sims = self.cosine_rows(both)?;
        let picked = self.gather_rows(sims, &[0])?;
        let flat = self.reshape(picked, vec![2])?;
        let one = self.slice_flat(flat, 1)?;
        Ok(one)
    }

    /// Layer normalisation over the last axis (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for k in 0..c {
                xhat[i * c + k] = (row[k] - mean) * is;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, xhat.clone())?, Op::LayerNorm { x, xhat, inv_std }, rg))
    }

    // ---- shape manipulation --------------------------------------------

    /// Tiles a single row (`[c]` or `1×c`) into an `rows×c` matrix.
    pub fn repeat_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.value(v).dims2()?;
        if r != 1 {
            return Err(TensorError::Dimension(format!("repeat_rows needs one row, got {:?}", self.shape(v))));
        }
        let row = self.value(v).data().to_vec();
        let out: Vec<f64> = (0..rows).flat_map(|_| row.iter().copied()).collect();
        let rg = self.rg(v);
        Ok(self.push(Tensor::new(vec![rows, c], out)?, Op::RepeatRows(v), rg))
    }

    /// Tiles a single column (`r×1`) into an `r×cols` matrix.
    pub fn repeat_cols(&mut self, v: Var, cols: usize) -> Result<Var> {
        let t = self.value(v);
        let r = t.numel();
        if !(t.shape().len() == 2 && t.shape()[1] == 1 || t.shape().len() == 1) {
            return Err(TensorError::Dimension(format!("repeat_cols needs one column, got {:?}", t.shape())));
        }
        let out: Vec<f64> = t.data().iter().flat_map(|&x| std::iter::repeat_n(x, cols)).collect();
        let rg = self.rg(v);
        Ok(self.push(Tensor::new(vec![r, cols], out)?, Op::RepeatCols(v), rg))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(TensorError::Index(format!("row {bad} out of range for {r} rows")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![idx.len(), c], out)?, Op::GatherRows(x, idx.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(x, &idx)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).dims2()?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.value(p).dims2()?;
            if pc != c {
                return Err(TensorError::Dimension(format!(
                    "concat_rows width {pc} does not match {c}"
                )));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, c], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(TensorError::Dimension(format!(
                    "concat_cols height {pr} does not match {r}"
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start > end || end > c {
            return Err(TensorError::Index(format!("columns {start}..{end} out of range for width {c}")));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r, w], out)?, Op::SliceCols(x, start), rg))
    }

    /// Element `i` of a flat tensor as a one-element node.
    pub fn slice_flat(&mut self, x: Var, i: usize) -> Result<Var> {
        let n = self.value(x).numel();
        let row = self.reshape(x, vec![1, n])?;
        let col = self.slice_cols(row, i, i + 1)?;
        self.reshape(col, vec![1])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Column-wise mean of an `r×c` matrix, giving `1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if r == 0 {
            return Err(TensorError::Contract("mean over zero rows".into()));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for k in 0..c {
                out[k] += src[i * c + k];
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows(x), rg))
    }

    // ---- reverse sweep -------------------------------------------------

    /// Populates gradients of `loss` with respect to every node that requires
    /// them. Calling it again on the same tape starts from fresh buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` call with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a registered parameter from the last backward pass.
    pub fn param_grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).and_then(|v| self.grad(*v))
    }

    /// Adds the parameter gradients of the last backward pass into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.add_grad(id, g);
            }
        }
    }

    /// Smallest |input| seen by any ReLU on this tape; `None` without ReLUs.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a).data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)),
                _ => None,
            })
            .reduce(f64::min)
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.value(*a).dims2().expect("checked");
                let c = self.value(*b).dims2().expect("checked").1;
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let bd = self.value(*b).data();
                    let mut da = vec![0.0; r * k];
                    for i in 0..r {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..c {
                                s += g[i * c + j] * bd[kk * c + j];
                            }
                            da[i * k + kk] = s;
                        }
                    }
                    acc(grads, *a, &da);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let ad = self.value(*a).data();
                    let mut db = vec![0.0; k * c];
                    for i in 0..r {
                        for kk in 0..k {
                            let av = ad[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..c {
                                db[kk * c + j] += av * g[i * c + j];
                            }
                        }
                    }
                    acc(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().expect("checked");
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                acc(grads, *a, &da);
            }
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, g.to_vec());
                self.acc_broadcast(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, g.to_vec());
                self.acc_broadcast(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let pick = |d: &[f64], i: usize| d[if d.len() == 1 { 0 } else { i }];
                if self.rg(*a) {
                    let ga = g.iter().enumerate().map(|(i, gv)| gv * pick(db, i)).collect();
                    self.acc_broadcast(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.iter().enumerate().map(|(i, gv)| gv * pick(da, i)).collect();
                    self.acc_broadcast(grads, *b, gb);
                }
            }
            Op::Scale(a, k) => {
                let da: Vec<f64> = g.iter().map(|v| v * k).collect();
                acc(grads, *a, &da);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = g.iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                acc(grads, *a, &da);
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = g.iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                acc(grads, *a, &da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = g.iter().zip(x).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                acc(grads, *a, &da);
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| {
                        let u = GELU_C * (xv + 0.044715 * xv * xv * xv);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xv * xv);
                        gv * (0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th * th) * du)
                    })
                    .collect();
                acc(grads, *a, &da);
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis).expect("checked");
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::CrossEntropy { logits, target, probs } => {
                let mut dx: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                dx[*target] -= g[0];
                acc(grads, *logits, &dx);
            }
            Op::CosineRows(x) => {
                let (r, c) = self.value(*x).dims2().expect("checked");
                let src = self.value(*x).data();
                let norms = row_norms(src, r, c);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..r {
                        let gij = g[i * r + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let den = norms[i] * norms[j] + COSINE_EPS;
                        let dot: f64 = (0..c).map(|k| src[i * c + k] * src[j * c + k]).sum();
                        // d/dx_i of dot/den, then the symmetric term for x_j.
                        let ci = if norms[i] > 0.0 { dot * norms[j] / (norms[i] * den * den) } else { 0.0 };
                        let cj = if norms[j] > 0.0 { dot * norms[i] / (norms[j] * den * den) } else { 0.0 };
                        for k in 0..c {
                            dx[i * c + k] += gij * (src[j * c + k] / den - ci * src[i * c + k]);
                            dx[j * c + k] += gij * (src[i * c + k] / den - cj * src[j * c + k]);
                        }
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::RepeatRows(v) => {
                let c = out.shape()[1];
                let mut dv = vec![0.0; c];
                for row in g.chunks(c) {
                    for (d, x) in dv.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(grads, *v, &dv);
            }
            Op::RepeatCols(v) => {
                let c = out.shape()[1];
                let dv: Vec<f64> = g.chunks(c).map(|row| row.iter().sum()).collect();
                acc(grads, *v, &dv);
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = self.value(*x).dims2().expect("checked");
                let mut dx = vec![0.0; r * c];
                for (o, &i) in idx.iter().enumerate() {
                    for k in 0..c {
                        dx[i * c + k] += g[o * c + k];
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.rg(*p) {
                        acc(grads, *p, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = out.dims2().expect("matrix");
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).dims2().expect("checked").1;
                    if self.rg(*p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        acc(grads, *p, &dp);
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.value(*x).dims2().expect("checked");
                let w = out.dims2().expect("matrix").1;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(grads, *x, &dx);
            }
            Op::Reshape(x) => acc(grads, *x, g),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                acc(grads, *x, &vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(grads, *x, &vec![g[0] / n as f64; n]);
            }
            Op::MeanRows(x) => {
                let (r, c) = self.value(*x).dims2().expect("checked");
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for k in 0..c {
                        dx[i * c + k] = g[k] / r as f64;
                    }
                }
                acc(grads, *x, &dx);
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let c = out.dims2().expect("matrix").1;
                let mut dx = vec![0.0; xhat.len()];
                for (i, is) in inv_std.iter().enumerate() {
                    let gr = &g[i * c..(i + 1) * c];
                    let xr = &xhat[i * c..(i + 1) * c];
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for k in 0..c {
                        dx[i * c + k] = is * (gr[k] - mg - xr[k] * mgx);
                    }
                }
                acc(grads, *x, &dx);
            }
        }
    }

    fn acc_broadcast(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        if self.value(v).numel() == 1 && g.len() != 1 {
            acc(grads, v, &[g.iter().sum()]);
        } else {
            acc(grads, v, &g);
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn row_norms(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    (0..r)
        .map(|i| src[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Dimension(format!("axis {axis} invalid for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}
