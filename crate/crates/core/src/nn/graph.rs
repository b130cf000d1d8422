//! Tape of tensor operations and its reverse pass.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order; the reverse pass walks it backwards once. Gradients are
//! accumulated in `f64` regardless of the storage scalar.

use alloc::vec;
use alloc::vec::Vec;

use super::{NnError, ParamId, ParamStore, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Conv1d { x: Var, w: Var, b: Var },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceLast { x: Var, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    AddBroadcastMid(Var, Var),
    WeightedSum(Var, Var),
    Softmax(Var),
    CrossEntropy { probs: Var, labels: Vec<usize> },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, scale: f64 },
    Sum(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op,
    needs_grad: bool,
}

/// Parameter gradients produced by [`Graph::backward`], indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F = f32> {
    slots: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Gradients {
            slots: store
                .ids()
                .map(|id| Some(Tensor::zeros(store.get(id).shape().to_vec())))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<F>> {
        self.slots.get_mut(id.0).and_then(Option::as_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|t| (ParamId(i), t)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<F>)> {
        self.slots
            .iter_mut()
            .enumerate()
            .filter_map(|(i, t)| t.as_mut().map(|t| (ParamId(i), t)))
    }

    /// Add `other` into `self`, slot by slot.
    pub fn accumulate(&mut self, other: &Gradients<F>) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (i, slot) in other.slots.iter().enumerate() {
            let Some(t) = slot else { continue };
            match &mut self.slots[i] {
                Some(mine) => {
                    for (a, &b) in mine.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                empty => *empty = Some(t.clone()),
            }
        }
    }
}

/// A single forward evaluation recorded for differentiation.
pub struct Graph<F: Real = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn dims2(op: &'static str, s: &[usize], other: &[usize]) -> Result<(usize, usize), NnError> {
    match s {
        [a, b] => Ok((*a, *b)),
        _ => Err(mismatch(op, s, other)),
    }
}

fn dims3(op: &'static str, s: &[usize], other: &[usize]) -> Result<(usize, usize, usize), NnError> {
    match s {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(mismatch(op, s, other)),
    }
}

/// Valid output range `lo..hi` for a same-padded tap at offset `s`.
#[inline]
fn tap_range(len: usize, s: isize) -> (usize, usize) {
    if s >= 0 {
        (0, len.saturating_sub(s as usize))
    } else {
        ((-s) as usize, len)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op, needs_grad: bool) -> Result<Var, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(op_name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<F> {
        let d: Vec<F> = data.into_iter().map(F::from_f64).collect();
        Tensor::new(shape, d).expect("internal shape bookkeeping")
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor<F>) -> Result<Var, NnError> {
        self.push("input", t, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let t = store.get(id).clone();
        self.nodes.push(Node {
            value: t,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x.to_f64(), y.to_f64()))
            .collect();
        let value = Self::from_f64(ta.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(name, value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NnError> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v.to_f64())).collect();
        let value = Self::from_f64(t.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(name, value, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, NnError> {
        self.unary("scale", x, |v| v * s, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.unary("relu", x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + libm::exp(-v)), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NnError> {
        self.unary("tanh", x, libm::tanh, Op::Tanh(x))
    }

    /// `x` of shape `[.., n]` plus bias `[n]` broadcast over leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = tb.len();
        if tb.shape().len() != 1 || tx.shape().last() != Some(&n) {
            return Err(mismatch("add_bias", tx.shape(), tb.shape()));
        }
        let bias = tb.to_f64_vec();
        let data = tx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bias).map(|(&v, &c)| v.to_f64() + c))
            .collect();
        let value = Self::from_f64(tx.shape().to_vec(), data);
        let ng = self.needs(x) || self.needs(b);
        self.push("add_bias", value, Op::AddBias(x, b), ng)
    }

    /// `[n, i] x [i, o] -> [n, o]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, i) = dims2("matmul", ta.shape(), tb.shape())?;
        let (i2, o) = dims2("matmul", tb.shape(), ta.shape())?;
        if i != i2 {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let bf = tb.to_f64_vec();
        let mut out = vec![0.0f64; n * o];
        for r in 0..n {
            let acc = &mut out[r * o..(r + 1) * o];
            for k in 0..i {
                let av = ta.data()[r * i + k].to_f64();
                if av == 0.0 {
                    continue;
                }
                for (c, &bv) in acc.iter_mut().zip(&bf[k * o..(k + 1) * o]) {
                    *c += av * bv;
                }
            }
        }
        let value = Self::from_f64(vec![n, o], out);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", value, Op::MatMul(a, b), ng)
    }

    /// Stride-1 same-padded convolution: `x [b, c, l]`, `w [o, c, k]` (odd `k`), `bias [o]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (bs, c, l) = dims3("conv1d", tx.shape(), tw.shape())?;
        let (o, c2, k) = dims3("conv1d", tw.shape(), tx.shape())?;
        if c != c2 || k % 2 == 0 {
            return Err(mismatch("conv1d", tx.shape(), tw.shape()));
        }
        if tb.shape() != [o] {
            return Err(mismatch("conv1d", tw.shape(), tb.shape()));
        }
        let pad = (k / 2) as isize;
        let xf = tx.to_f64_vec();
        let wf = tw.to_f64_vec();
        let bias = tb.to_f64_vec();
        let mut out = vec![0.0f64; bs * o * l];
        for bi in 0..bs {
            for oi in 0..o {
                let acc = &mut out[(bi * o + oi) * l..(bi * o + oi + 1) * l];
                acc.fill(bias[oi]);
                for ci in 0..c {
                    let xrow = &xf[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                    for ki in 0..k {
                        let wv = wf[(oi * c + ci) * k + ki];
                        let s = ki as isize - pad;
                        let (lo, hi) = tap_range(l, s);
                        let src = &xrow[(lo as isize + s) as usize..(hi as isize + s) as usize];
                        for (a, &xv) in acc[lo..hi].iter_mut().zip(src) {
                            *a += wv * xv;
                        }
                    }
                }
            }
        }
        let value = Self::from_f64(vec![bs, o, l], out);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push("conv1d", value, Op::Conv1d { x, w, b }, ng)
    }

    /// Non-overlapping max pooling along the last axis of `[b, c, l]`; a tail
    /// shorter than `window` is dropped. Ties go to the first position.
    pub fn max_pool1d(&mut self, x: Var, window: usize) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (bs, c, l) = dims3("max_pool1d", tx.shape(), &[window])?;
        if window == 0 || l < window {
            return Err(mismatch("max_pool1d", tx.shape(), &[window]));
        }
        let lo = l / window;
        let mut out = Vec::with_capacity(bs * c * lo);
        let mut argmax = Vec::with_capacity(bs * c * lo);
        for row in 0..bs * c {
            let src = &tx.data()[row * l..(row + 1) * l];
            for j in 0..lo {
                let mut best = j * window;
                for p in j * window + 1..(j + 1) * window {
                    if src[p] > src[best] {
                        best = p;
                    }
                }
                out.push(src[best]);
                argmax.push(row * l + best);
            }
        }
        let value = Tensor::new(vec![bs, c, lo], out)?;
        let ng = self.needs(x);
        self.push("max_pool1d", value, Op::MaxPool1d { x, argmax }, ng)
    }

    /// Mean over the last axis: `[b, c, l] -> [b, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (bs, c, l) = dims3("global_avg_pool", tx.shape(), &[])?;
        let data = tx
            .data()
            .chunks(l)
            .map(|row| row.iter().map(|v| v.to_f64()).sum::<f64>() / l as f64)
            .collect();
        let value = Self::from_f64(vec![bs, c], data);
        let ng = self.needs(x);
        self.push("global_avg_pool", value, Op::GlobalAvgPool(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        let tx = self.value(x);
        let expected: usize = shape.iter().product();
        if expected != tx.len() {
            return Err(mismatch("reshape", tx.shape(), &shape));
        }
        let value = tx.clone().reshaped(shape)?;
        let ng = self.needs(x);
        self.push("reshape", value, Op::Reshape(x), ng)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NnError> {
        let first = self.value(*parts.first().ok_or(NnError::Invalid("concat of nothing"))?);
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != base[d]) {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        )
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let tx = self.value(x);
        let d = *tx.shape().last().unwrap_or(&0);
        if start + len > d || len == 0 {
            return Err(mismatch("slice_last", tx.shape(), &[start, len]));
        }
        let out: Vec<F> = tx
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        let ng = self.needs(x);
        self.push("slice_last", value, Op::SliceLast { x, start }, ng)
    }

    /// Gather rows of `table [v, e]`: output `[ids.len(), e]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let tt = self.value(table);
        let (v, e) = dims2("embedding", tt.shape(), &[ids.len()])?;
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(NnError::IndexOutOfRange { index: id, rows: v });
            }
            out.extend_from_slice(tt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), e], out)?;
        let ng = self.needs(table);
        self.push(
            "embedding",
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// `a [b, t, n] + q [b, n]` broadcast over `t`.
    pub fn add_broadcast_mid(&mut self, a: Var, q: Var) -> Result<Var, NnError> {
        let (ta, tq) = (self.value(a), self.value(q));
        let (bs, t, n) = dims3("add_broadcast_mid", ta.shape(), tq.shape())?;
        if tq.shape() != [bs, n] {
            return Err(mismatch("add_broadcast_mid", ta.shape(), tq.shape()));
        }
        let mut out = Vec::with_capacity(bs * t * n);
        for bi in 0..bs {
            let qrow = tq.row(bi);
            for ti in 0..t {
                let arow = &ta.data()[(bi * t + ti) * n..(bi * t + ti + 1) * n];
                out.extend(arow.iter().zip(qrow).map(|(&x, &y)| x.to_f64() + y.to_f64()));
            }
        }
        let value = Self::from_f64(vec![bs, t, n], out);
        let ng = self.needs(a) || self.needs(q);
        self.push("add_broadcast_mid", value, Op::AddBroadcastMid(a, q), ng)
    }

    /// `sum_t w[b, t] * v[b, t, :]`: `[b, t] x [b, t, h] -> [b, h]`.
    pub fn weighted_sum(&mut self, w: Var, v: Var) -> Result<Var, NnError> {
        let (tw, tv) = (self.value(w), self.value(v));
        let (bs, t, h) = dims3("weighted_sum", tv.shape(), tw.shape())?;
        if tw.shape() != [bs, t] {
            return Err(mismatch("weighted_sum", tw.shape(), tv.shape()));
        }
        let mut out = vec![0.0f64; bs * h];
        for bi in 0..bs {
            let acc = &mut out[bi * h..(bi + 1) * h];
            for ti in 0..t {
                let wt = tw.data()[bi * t + ti].to_f64();
                let vrow = &tv.data()[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                for (a, &x) in acc.iter_mut().zip(vrow) {
                    *a += wt * x.to_f64();
                }
            }
        }
        let value = Self::from_f64(vec![bs, h], out);
        let ng = self.needs(w) || self.needs(v);
        self.push("weighted_sum", value, Op::WeightedSum(w, v), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NnError> {
        let tx = self.value(x);
        let d = *tx.shape().last().ok_or(NnError::Invalid("softmax of a scalar"))?;
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(d) {
            softmax_row(row, &mut out);
        }
        let value = Self::from_f64(tx.shape().to_vec(), out);
        let ng = self.needs(x);
        self.push("softmax", value, Op::Softmax(x), ng)
    }

    /// Mean of `-ln probs[i, labels[i]]` over rows of `probs [n, c]`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var, NnError> {
        let tp = self.value(probs);
        let (n, c) = dims2("cross_entropy", tp.shape(), &[labels.len()])?;
        if n != labels.len() || n == 0 {
            return Err(mismatch("cross_entropy", tp.shape(), &[labels.len()]));
        }
        let mut total = 0.0;
        for (i, &lab) in labels.iter().enumerate() {
            if lab >= c {
                return Err(NnError::LabelOutOfRange { label: lab, classes: c });
            }
            total -= libm::log(tp.data()[i * c + lab].to_f64());
        }
        let value = Tensor::scalar(F::from_f64(total / n as f64));
        let ng = self.needs(probs);
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            ng,
        )
    }

    /// `scale * sum_i -ln softmax(logits[i])[target_i]`, skipping rows whose
    /// target is `None`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], scale: f64) -> Result<Var, NnError> {
        let tl = self.value(logits);
        let (n, c) = dims2("softmax_cross_entropy", tl.shape(), &[targets.len()])?;
        if n != targets.len() {
            return Err(mismatch("softmax_cross_entropy", tl.shape(), &[targets.len()]));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut total = 0.0;
        for (i, row) in tl.data().chunks(c).enumerate() {
            let lse = log_sum_exp(row);
            probs.extend(row.iter().map(|v| libm::exp(v.to_f64() - lse)));
            if let Some(t) = targets[i] {
                if t >= c {
                    return Err(NnError::LabelOutOfRange { label: t, classes: c });
                }
                total += lse - row[t].to_f64();
            }
        }
        let value = Tensor::scalar(F::from_f64(scale * total));
        let ng = self.needs(logits);
        self.push(
            "softmax_cross_entropy",
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            ng,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NnError> {
        let total: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        let ng = self.needs(x);
        self.push("sum", Tensor::scalar(F::from_f64(total)), Op::Sum(x), ng)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>, NnError> {
        let rs = self.value(root);
        if rs.len() != 1 {
            return Err(NnError::NonScalarRoot(rs.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);
        let mut params: Vec<Option<(Vec<usize>, Vec<f64>)>> = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut params)?;
        }

        let slots = params
            .into_iter()
            .map(|g| g.map(|(shape, g)| Self::from_f64(shape, g)))
            .collect();
        Ok(Gradients { slots })
    }

    fn backward_node(&self, node: &Node<F>, g: &[f64], grads: &mut [Option<Vec<f64>>], params: &mut Vec<Option<(Vec<usize>, Vec<f64>)>>) -> Result<(), NnError> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if params.len() <= id.0 {
                    params.resize_with(id.0 + 1, || None);
                }
                let (_, p) = params[id.0].get_or_insert_with(|| (node.value.shape().to_vec(), vec![0.0; g.len()]));
                for (a, &b) in p.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    for (d, &x) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *d += x;
                    }
                }
                if self.needs(*b) {
                    for (d, &x) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                        *d += sign * x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.needs(*a) {
                    for ((d, &x), &y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(tb.data()) {
                        *d += x * y.to_f64();
                    }
                }
                if self.needs(*b) {
                    for ((d, &x), &y) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(ta.data()) {
                        *d += x * y.to_f64();
                    }
                }
            }
            Op::Scale(x, s) => {
                for (d, &v) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                    *d += s * v;
                }
            }
            Op::AddBias(x, b) => {
                let n = val(*b).len();
                if self.needs(*x) {
                    for (d, &v) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                        *d += v;
                    }
                }
                if self.needs(*b) {
                    let db = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, i) = (ta.shape()[0], ta.shape()[1]);
                let o = tb.shape()[1];
                if self.needs(*a) {
                    let bf = tb.to_f64_vec();
                    let da = slot(grads, *a, n * i);
                    for r in 0..n {
                        let grow = &g[r * o..(r + 1) * o];
                        for k in 0..i {
                            let brow = &bf[k * o..(k + 1) * o];
                            da[r * i + k] += dot(grow, brow);
                        }
                    }
                }
                if self.needs(*b) {
                    let db = slot(grads, *b, i * o);
                    for r in 0..n {
                        let grow = &g[r * o..(r + 1) * o];
                        for k in 0..i {
                            let av = ta.data()[r * i + k].to_f64();
                            if av == 0.0 {
                                continue;
                            }
                            for (d, &x) in db[k * o..(k + 1) * o].iter_mut().zip(grow) {
                                *d += av * x;
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                for ((d, &v), &y) in slot(grads, *x, g.len()).iter_mut().zip(g).zip(node.value.data()) {
                    if y > F::ZERO {
                        *d += v;
                    }
                }
            }
            Op::Sigmoid(x) => {
                for ((d, &v), &y) in slot(grads, *x, g.len()).iter_mut().zip(g).zip(node.value.data()) {
                    let y = y.to_f64();
                    *d += v * y * (1.0 - y);
                }
            }
            Op::Tanh(x) => {
                for ((d, &v), &y) in slot(grads, *x, g.len()).iter_mut().zip(g).zip(node.value.data()) {
                    let y = y.to_f64();
                    *d += v * (1.0 - y * y);
                }
            }
            Op::Conv1d { x, w, b } => self.conv1d_backward(*x, *w, *b, g, grads),
            Op::MaxPool1d { x, argmax } => {
                let n = val(*x).len();
                let dx = slot(grads, *x, n);
                for (&src, &v) in argmax.iter().zip(g) {
                    dx[src] += v;
                }
            }
            Op::GlobalAvgPool(x) => {
                let tx = val(*x);
                let l = tx.shape()[2];
                let dx = slot(grads, *x, tx.len());
                for (row, &v) in dx.chunks_mut(l).zip(g) {
                    let share = v / l as f64;
                    for d in row {
                        *d += share;
                    }
                }
            }
            Op::Reshape(x) => {
                for (d, &v) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                    *d += v;
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let tp = val(p);
                    let block = tp.shape()[*axis] * inner;
                    if self.needs(p) {
                        let dp = slot(grads, p, tp.len());
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            for (d, &v) in dp[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    offset += block;
                }
            }
            Op::SliceLast { x, start } => {
                let tx = val(*x);
                let d = *tx.shape().last().unwrap();
                let len = *node.value.shape().last().unwrap();
                let dx = slot(grads, *x, tx.len());
                for (row, src) in dx.chunks_mut(d).zip(g.chunks(len)) {
                    for (a, &v) in row[*start..start + len].iter_mut().zip(src) {
                        *a += v;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let tt = val(*table);
                let e = tt.shape()[1];
                let dt = slot(grads, *table, tt.len());
                for (r, &id) in ids.iter().enumerate() {
                    for (a, &v) in dt[id * e..(id + 1) * e].iter_mut().zip(&g[r * e..(r + 1) * e]) {
                        *a += v;
                    }
                }
            }
            Op::AddBroadcastMid(a, q) => {
                let s = node.value.shape();
                let (bs, t, n) = (s[0], s[1], s[2]);
                if self.needs(*a) {
                    for (d, &v) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *d += v;
                    }
                }
                if self.needs(*q) {
                    let dq = slot(grads, *q, bs * n);
                    for bi in 0..bs {
                        for ti in 0..t {
                            let src = &g[(bi * t + ti) * n..(bi * t + ti + 1) * n];
                            for (d, &v) in dq[bi * n..(bi + 1) * n].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::WeightedSum(w, v) => {
                let (tw, tv) = (val(*w), val(*v));
                let s = tv.shape();
                let (bs, t, h) = (s[0], s[1], s[2]);
                if self.needs(*w) {
                    let dw = slot(grads, *w, bs * t);
                    for bi in 0..bs {
                        let grow = &g[bi * h..(bi + 1) * h];
                        for ti in 0..t {
                            let vrow = &tv.data()[(bi * t + ti) * h..(bi * t + ti + 1) * h];
                            dw[bi * t + ti] += grow.iter().zip(vrow).map(|(a, b)| a * b.to_f64()).sum::<f64>();
                        }
                    }
                }
                if self.needs(*v) {
                    let dv = slot(grads, *v, tv.len());
                    for bi in 0..bs {
                        let grow = &g[bi * h..(bi + 1) * h];
                        for ti in 0..t {
                            let wt = tw.data()[bi * t + ti].to_f64();
                            for (d, &x) in dv[(bi * t + ti) * h..(bi * t + ti + 1) * h].iter_mut().zip(grow) {
                                *d += wt * x;
                            }
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let d = *node.value.shape().last().unwrap();
                let dx = slot(grads, *x, g.len());
                for ((drow, grow), yrow) in dx.chunks_mut(d).zip(g.chunks(d)).zip(node.value.data().chunks(d)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b.to_f64()).sum();
                    for ((a, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *a += y.to_f64() * (gv - dot);
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let tp = val(*probs);
                let c = tp.shape()[1];
                let n = labels.len() as f64;
                let dp = slot(grads, *probs, tp.len());
                for (i, &lab) in labels.iter().enumerate() {
                    dp[i * c + lab] -= g[0] / (n * tp.data()[i * c + lab].to_f64());
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                let c = self.shape(*logits)[1];
                let dl = slot(grads, *logits, probs.len());
                let k = g[0] * scale;
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = &mut dl[i * c..(i + 1) * c];
                    for (d, &p) in row.iter_mut().zip(&probs[i * c..(i + 1) * c]) {
                        *d += k * p;
                    }
                    row[t] -= k;
                }
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                for d in slot(grads, *x, n).iter_mut() {
                    *d += g[0];
                }
            }
        }
        Ok(())
    }

    fn conv1d_backward(&self, x: Var, w: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (tx, tw) = (self.value(x), self.value(w));
        let (bs, c, l) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (o, k) = (tw.shape()[0], tw.shape()[2]);
        let pad = (k / 2) as isize;
        if self.needs(b) {
            let db = slot(grads, b, o);
            for bi in 0..bs {
                for oi in 0..o {
                    db[oi] += g[(bi * o + oi) * l..(bi * o + oi + 1) * l].iter().sum::<f64>();
                }
            }
        }
        if self.needs(w) {
            let xf = tx.to_f64_vec();
            let dw = slot(grads, w, o * c * k);
            for bi in 0..bs {
                for oi in 0..o {
                    let grow = &g[(bi * o + oi) * l..(bi * o + oi + 1) * l];
                    for ci in 0..c {
                        let xrow = &xf[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                        for ki in 0..k {
                            let s = ki as isize - pad;
                            let (lo, hi) = tap_range(l, s);
                            let src = &xrow[(lo as isize + s) as usize..(hi as isize + s) as usize];
                            dw[(oi * c + ci) * k + ki] += dot(&grow[lo..hi], src);
                        }
                    }
                }
            }
        }
        if self.needs(x) {
            let wf = tw.to_f64_vec();
            let dx = slot(grads, x, bs * c * l);
            for bi in 0..bs {
                for oi in 0..o {
                    let grow = &g[(bi * o + oi) * l..(bi * o + oi + 1) * l];
                    for ci in 0..c {
                        let drow = &mut dx[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                        for ki in 0..k {
                            let wv = wf[(oi * c + ci) * k + ki];
                            let s = ki as isize - pad;
                            let (lo, hi) = tap_range(l, s);
                            let dst = &mut drow[(lo as isize + s) as usize..(hi as isize + s) as usize];
                            for (d, &gv) in dst.iter_mut().zip(&grow[lo..hi]) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn log_sum_exp<F: Real>(row: &[F]) -> f64 {
    let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| libm::exp(v.to_f64() - max)).sum();
    max + libm::log(s)
}

fn softmax_row<F: Real>(row: &[F], out: &mut Vec<f64>) {
    let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut s = 0.0;
    for v in row {
        let e = libm::exp(v.to_f64() - max);
        s += e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v /= s;
    }
}
