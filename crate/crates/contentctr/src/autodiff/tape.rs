//! Reverse-mode tape. Every op records a node holding the op kind, its input
//! node indices, and the forward value; `backward` walks nodes in reverse
//! creation order (creation order is already topological) and accumulates
//! gradients additively, so a tensor used twice receives both contributions.
//!
//! Values are immutable once recorded: ops never mutate an input buffer, and
//! repeated forward passes over the same inputs are bit-identical. All math is
//! f64.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::autodiff::tensor::{numel, strides, NodeRef, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Gelu(usize),
    Clamp(usize, f64, f64),
    /// Sum over one axis, or over everything when the axis is `None`.
    Sum(usize, Option<usize>),
    Mean(usize, Option<usize>),
    Softmax(usize, usize),
    Matmul(usize, usize),
    Concat(Vec<usize>, usize),
    /// input, axis, start, len
    Slice(usize, usize, usize, usize),
    /// Select rows along axis 0, duplicates allowed.
    GatherRows(usize, Vec<usize>),
    SwapAxes(usize, usize, usize),
    Reshape(usize),
    Broadcast(usize),
}

struct Node {
    op: Op,
    value: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

/// Per-node gradients produced by one `backward` call. Query with the tensor
/// returned by the op (or leaf) whose gradient is wanted.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `t`, if `t` lives on the tape that was
    /// differentiated and received any gradient.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        let node = t.node()?;
        if node.tape != self.tape {
            return None;
        }
        self.grads.get(node.index)?.as_deref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable leaf and returns its tracked tensor.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(Error::BadShape {
                op: "leaf",
                msg: format!("{} elements do not fill", data.len()),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(Op::Leaf, Arc::new(data), shape.to_vec()))
    }

    fn push(&self, op: Op, value: Arc<Vec<f64>>, shape: Vec<usize>) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op,
            value: Arc::clone(&value),
            shape: shape.clone(),
        });
        Tensor::tracked(
            shape,
            value,
            NodeRef {
                tape: self.id,
                index,
            },
        )
    }

    /// Node index for `t` on this tape. Detached tensors are interned as
    /// constant leaves; tensors from another tape are rejected.
    fn input(&self, op: &'static str, t: &Tensor) -> Result<usize> {
        match t.node() {
            Some(node) => {
                if node.tape != self.id {
                    return Err(Error::TapeMismatch { op });
                }
                Ok(node.index)
            }
            None => {
                let interned = self.push(Op::Leaf, t.storage(), t.shape().to_vec());
                Ok(interned.node().expect("just pushed").index)
            }
        }
    }

    // ── elementwise binary ──────────────────────────────────────────────

    fn binary(
        &self,
        op_name: &'static str,
        a: &Tensor,
        b: &Tensor,
        make: impl Fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let ia = self.input(op_name, a)?;
        let ib = self.input(op_name, b)?;
        let out: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(make(ia, ib), Arc::new(out), a.shape().to_vec()))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("div", a, b, Op::Div, |x, y| x / y)
    }

    // ── elementwise unary ───────────────────────────────────────────────

    fn unary(
        &self,
        op_name: &'static str,
        x: &Tensor,
        make: impl Fn(usize) -> Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Tensor> {
        let ix = self.input(op_name, x)?;
        let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
        Ok(self.push(make(ix), Arc::new(out), x.shape().to_vec()))
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.unary("scale", x, |i| Op::Scale(i, c), |v| v * c)
    }

    /// x + c elementwise.
    pub fn offset(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.unary("offset", x, Op::Offset, |v| v + c)
    }

    pub fn neg(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("neg", x, Op::Neg, |v| -v)
    }

    pub fn exp(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("exp", x, Op::Exp, f64::exp)
    }

    pub fn log(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("log", x, Op::Log, f64::ln)
    }

    pub fn sqrt(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("sqrt", x, Op::Sqrt, f64::sqrt)
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("tanh", x, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("sigmoid", x, Op::Sigmoid, stable_sigmoid)
    }

    pub fn softplus(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("softplus", x, Op::Softplus, stable_softplus)
    }

    pub fn gelu(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("gelu", x, Op::Gelu, gelu_value)
    }

    /// Clamp to [lo, hi]. The gradient passes through wherever the input lies
    /// inside the closed interval and is zero outside.
    pub fn clamp(&self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        self.unary("clamp", x, |i| Op::Clamp(i, lo, hi), |v| v.clamp(lo, hi))
    }

    // ── reductions ──────────────────────────────────────────────────────

    fn reduce(
        &self,
        op_name: &'static str,
        x: &Tensor,
        axis: Option<usize>,
        mean: bool,
    ) -> Result<Tensor> {
        let ix = self.input(op_name, x)?;
        match axis {
            None => {
                let sum: f64 = x.data().iter().sum();
                let v = if mean { sum / x.numel() as f64 } else { sum };
                let op = if mean {
                    Op::Mean(ix, None)
                } else {
                    Op::Sum(ix, None)
                };
                Ok(self.push(op, Arc::new(vec![v]), vec![]))
            }
            Some(ax) => {
                if ax >= x.shape().len() {
                    return Err(Error::IndexOutOfBounds {
                        op: op_name,
                        index: ax,
                        extent: x.shape().len(),
                    });
                }
                let (outer, len, inner) = split_axis(x.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                let data = x.data();
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += data[base + i];
                        }
                    }
                }
                if mean {
                    let inv = 1.0 / len as f64;
                    for v in &mut out {
                        *v *= inv;
                    }
                }
                let mut shape = x.shape().to_vec();
                shape.remove(ax);
                let op = if mean {
                    Op::Mean(ix, Some(ax))
                } else {
                    Op::Sum(ix, Some(ax))
                };
                Ok(self.push(op, Arc::new(out), shape))
            }
        }
    }

    /// Sum over `axis`, or over all elements (scalar) when `axis` is `None`.
    pub fn sum(&self, x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        self.reduce("sum", x, axis, false)
    }

    pub fn mean(&self, x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        self.reduce("mean", x, axis, true)
    }

    /// Softmax along `axis`. `-inf` entries get probability exactly 0; a line
    /// that is entirely `-inf` is an error because the distribution would be
    /// undefined.
    pub fn softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= x.shape().len() {
            return Err(Error::IndexOutOfBounds {
                op: "softmax",
                index: axis,
                extent: x.shape().len(),
            });
        }
        let ix = self.input("softmax", x)?;
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let data = x.data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..len {
                    max = max.max(data[at(a)]);
                }
                if max == f64::NEG_INFINITY {
                    return Err(Error::DegenerateSoftmaxRow { row: o * inner + i });
                }
                let mut total = 0.0;
                for a in 0..len {
                    let e = (data[at(a)] - max).exp();
                    out[at(a)] = e;
                    total += e;
                }
                let inv = 1.0 / total;
                for a in 0..len {
                    out[at(a)] *= inv;
                }
            }
        }
        Ok(self.push(Op::Softmax(ix, axis), Arc::new(out), x.shape().to_vec()))
    }

    // ── matmul ──────────────────────────────────────────────────────────

    /// Matrix product. Accepts rank-2 at either side and rank-3 batches;
    /// batch extents must agree or broadcast from 1 (a rank-2 operand
    /// broadcasts across the other side's batch).
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let dims = MatmulDims::resolve(a.shape(), b.shape())?;
        let ia = self.input("matmul", a)?;
        let ib = self.input("matmul", b)?;
        let out = dims.forward(a.data(), b.data());
        Ok(self.push(Op::Matmul(ia, ib), Arc::new(out), dims.out_shape()))
    }

    // ── structural ops ──────────────────────────────────────────────────

    /// Concatenate along `axis`. All inputs must agree on every other extent.
    pub fn concat(&self, xs: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = xs.first().ok_or_else(|| Error::BadShape {
            op: "concat",
            msg: "no inputs".into(),
            shape: vec![],
        })?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::IndexOutOfBounds {
                op: "concat",
                index: axis,
                extent: rank,
            });
        }
        let mut ax_total = 0;
        for x in xs {
            if x.shape().len() != rank
                || x.shape()[..axis] != first.shape()[..axis]
                || x.shape()[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape().to_vec(),
                    right: x.shape().to_vec(),
                });
            }
            ax_total += x.shape()[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = ax_total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = vec![0.0; numel(&shape)];
        let mut offset = 0;
        let mut indices = Vec::with_capacity(xs.len());
        for x in xs {
            indices.push(self.input("concat", x)?);
            let ax_len = x.shape()[axis];
            let data = x.data();
            for o in 0..outer {
                let src = o * ax_len * inner;
                let dst = (o * ax_total + offset) * inner;
                out[dst..dst + ax_len * inner].copy_from_slice(&data[src..src + ax_len * inner]);
            }
            offset += ax_len;
        }
        Ok(self.push(Op::Concat(indices, axis), Arc::new(out), shape))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&self, x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= x.shape().len() {
            return Err(Error::IndexOutOfBounds {
                op: "slice",
                index: axis,
                extent: x.shape().len(),
            });
        }
        let ax_len = x.shape()[axis];
        if start + len > ax_len || len == 0 {
            return Err(Error::IndexOutOfBounds {
                op: "slice",
                index: start + len,
                extent: ax_len,
            });
        }
        let ix = self.input("slice", x)?;
        let (outer, _, inner) = split_axis(x.shape(), axis);
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        let data = x.data();
        for o in 0..outer {
            let src = (o * ax_len + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        Ok(self.push(Op::Slice(ix, axis, start, len), Arc::new(out), shape))
    }

    /// Select rows along axis 0 by index, duplicates allowed. The backward
    /// pass scatter-adds, so a row gathered twice accumulates both gradients.
    pub fn gather_rows(&self, x: &Tensor, rows: &[usize]) -> Result<Tensor> {
        if x.shape().is_empty() {
            return Err(Error::BadShape {
                op: "gather_rows",
                msg: "rank must be at least 1".into(),
                shape: x.shape().to_vec(),
            });
        }
        let extent = x.shape()[0];
        for &r in rows {
            if r >= extent {
                return Err(Error::IndexOutOfBounds {
                    op: "gather_rows",
                    index: r,
                    extent,
                });
            }
        }
        let ix = self.input("gather_rows", x)?;
        let row_size: usize = x.shape()[1..].iter().product();
        let mut out = vec![0.0; rows.len() * row_size];
        let data = x.data();
        for (k, &r) in rows.iter().enumerate() {
            out[k * row_size..(k + 1) * row_size]
                .copy_from_slice(&data[r * row_size..(r + 1) * row_size]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = rows.len();
        Ok(self.push(Op::GatherRows(ix, rows.to_vec()), Arc::new(out), shape))
    }

    pub fn swap_axes(&self, x: &Tensor, a: usize, b: usize) -> Result<Tensor> {
        let rank = x.shape().len();
        if a >= rank || b >= rank {
            return Err(Error::IndexOutOfBounds {
                op: "swap_axes",
                index: a.max(b),
                extent: rank,
            });
        }
        let ix = self.input("swap_axes", x)?;
        let mut shape = x.shape().to_vec();
        shape.swap(a, b);
        let out = permute_two(x.data(), x.shape(), a, b);
        Ok(self.push(Op::SwapAxes(ix, a, b), Arc::new(out), shape))
    }

    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != x.numel() {
            return Err(Error::BadShape {
                op: "reshape",
                msg: format!("cannot reshape {:?} into", x.shape()),
                shape: shape.to_vec(),
            });
        }
        let ix = self.input("reshape", x)?;
        Ok(self.push(Op::Reshape(ix), x.storage(), shape.to_vec()))
    }

    /// Broadcast to `shape`: ranks align at the trailing end and each extent
    /// must match or be 1. The backward pass sums over the expanded axes.
    pub fn broadcast_to(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let plan = BroadcastPlan::resolve(x.shape(), shape).ok_or(Error::ShapeMismatch {
            op: "broadcast_to",
            left: x.shape().to_vec(),
            right: shape.to_vec(),
        })?;
        let ix = self.input("broadcast_to", x)?;
        let out = plan.expand(x.data());
        Ok(self.push(Op::Broadcast(ix), Arc::new(out), shape.to_vec()))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Gradients of a scalar `loss` w.r.t. every node that influences it.
    /// The tape is not consumed: further ops or another backward call are
    /// fine, and gradients from separate calls are independent.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let node = loss.node().ok_or(Error::TapeMismatch { op: "backward" })?;
        if node.tape != self.id {
            return Err(Error::TapeMismatch { op: "backward" });
        }
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[node.index] = Some(vec![1.0]);
        for id in (0..=node.index).rev() {
            let Some(g) = grads[id].take() else { continue };
            step_backward(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

// ── shared numeric kernels ──────────────────────────────────────────────

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Decomposes `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_two(data: &[f64], shape: &[usize], a: usize, b: usize) -> Vec<f64> {
    if a == b {
        return data.to_vec();
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let mut out = vec![0.0; data.len()];
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for (lin, &v) in data.iter().enumerate() {
        let mut rem = lin;
        for d in 0..rank {
            idx[d] = rem / in_strides[d];
            rem %= in_strides[d];
        }
        idx.swap(a, b);
        let mut dst = 0;
        for d in 0..rank {
            dst += idx[d] * out_strides[d];
        }
        out[dst] = v;
    }
    out
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    /// Batch stride of each operand: 0 when it broadcasts.
    a_stride: usize,
    b_stride: usize,
    rank2_out: bool,
}

impl MatmulDims {
    fn resolve(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            left: a.to_vec(),
            right: b.to_vec(),
        };
        let (ba, m, ka) = match a.len() {
            2 => (None, a[0], a[1]),
            3 => (Some(a[0]), a[1], a[2]),
            _ => return Err(mismatch()),
        };
        let (bb, kb, n) = match b.len() {
            2 => (None, b[0], b[1]),
            3 => (Some(b[0]), b[1], b[2]),
            _ => return Err(mismatch()),
        };
        if ka != kb {
            return Err(mismatch());
        }
        let (batch, rank2_out) = match (ba, bb) {
            (None, None) => (1, true),
            (Some(x), None) | (None, Some(x)) => (x, false),
            (Some(x), Some(y)) => {
                if x == y {
                    (x, false)
                } else if x == 1 {
                    (y, false)
                } else if y == 1 {
                    (x, false)
                } else {
                    return Err(mismatch());
                }
            }
        };
        // Stride 0 makes a broadcast operand reuse its single block; the
        // backward pass then accumulates every batch's contribution into it.
        let a_stride = match ba {
            Some(x) if x == batch => m * ka,
            _ => 0,
        };
        let b_stride = match bb {
            Some(x) if x == batch => kb * n,
            _ => 0,
        };
        Ok(MatmulDims {
            batch,
            m,
            k: ka,
            n,
            a_stride,
            b_stride,
            rank2_out,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        if self.rank2_out {
            vec![self.m, self.n]
        } else {
            vec![self.batch, self.m, self.n]
        }
    }

    fn forward(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.m * self.n];
        for t in 0..self.batch {
            let at = &a[t * self.a_stride..t * self.a_stride + self.m * self.k];
            let bt = &b[t * self.b_stride..t * self.b_stride + self.k * self.n];
            let ct = &mut out[t * self.m * self.n..(t + 1) * self.m * self.n];
            for i in 0..self.m {
                for p in 0..self.k {
                    let aip = at[i * self.k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bt[p * self.n..(p + 1) * self.n];
                    let crow = &mut ct[i * self.n..(i + 1) * self.n];
                    for j in 0..self.n {
                        crow[j] += aip * brow[j];
                    }
                }
            }
        }
        out
    }
}

struct BroadcastPlan {
    target: Vec<usize>,
    /// Source shape left-padded with 1s to the target rank.
    padded: Vec<usize>,
}

impl BroadcastPlan {
    fn resolve(src: &[usize], target: &[usize]) -> Option<BroadcastPlan> {
        if src.len() > target.len() {
            return None;
        }
        let pad = target.len() - src.len();
        let mut padded = vec![1usize; target.len()];
        padded[pad..].copy_from_slice(src);
        for (p, t) in padded.iter().zip(target) {
            if *p != *t && *p != 1 {
                return None;
            }
        }
        Some(BroadcastPlan {
            target: target.to_vec(),
            padded,
        })
    }

    /// Linear source index for each linear target index.
    fn source_index(&self, mut lin: usize, t_strides: &[usize], s_strides: &[usize]) -> usize {
        let mut src = 0;
        for d in 0..self.target.len() {
            let c = lin / t_strides[d];
            lin %= t_strides[d];
            if self.padded[d] != 1 {
                src += c * s_strides[d];
            }
        }
        src
    }

    fn expand(&self, data: &[f64]) -> Vec<f64> {
        let t_strides = strides(&self.target);
        let s_strides = strides(&self.padded);
        let total = numel(&self.target);
        let mut out = vec![0.0; total];
        for (lin, slot) in out.iter_mut().enumerate() {
            *slot = data[self.source_index(lin, &t_strides, &s_strides)];
        }
        out
    }

    fn reduce(&self, grad: &[f64]) -> Vec<f64> {
        let t_strides = strides(&self.target);
        let s_strides = strides(&self.padded);
        let mut out = vec![0.0; numel(&self.padded)];
        for (lin, &g) in grad.iter().enumerate() {
            out[self.source_index(lin, &t_strides, &s_strides)] += g;
        }
        out
    }
}

// ── backward rules ──────────────────────────────────────────────────────

fn acc(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn step_backward(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let ga = acc(grads, *a, g.len());
            for (s, &v) in ga.iter_mut().zip(g) {
                *s += v;
            }
            let gb = acc(grads, *b, g.len());
            for (s, &v) in gb.iter_mut().zip(g) {
                *s += v;
            }
        }
        Op::Sub(a, b) => {
            let ga = acc(grads, *a, g.len());
            for (s, &v) in ga.iter_mut().zip(g) {
                *s += v;
            }
            let gb = acc(grads, *b, g.len());
            for (s, &v) in gb.iter_mut().zip(g) {
                *s -= v;
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.clone(), nodes[*b].value.clone());
            let ga = acc(grads, *a, g.len());
            for i in 0..g.len() {
                ga[i] += g[i] * bv[i];
            }
            let gb = acc(grads, *b, g.len());
            for i in 0..g.len() {
                gb[i] += g[i] * av[i];
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (nodes[*a].value.clone(), nodes[*b].value.clone());
            let ga = acc(grads, *a, g.len());
            for i in 0..g.len() {
                ga[i] += g[i] / bv[i];
            }
            let gb = acc(grads, *b, g.len());
            for i in 0..g.len() {
                gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
            }
        }
        Op::Scale(x, c) => {
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] * c;
            }
        }
        Op::Offset(x) => {
            let gx = acc(grads, *x, g.len());
            for (s, &v) in gx.iter_mut().zip(g) {
                *s += v;
            }
        }
        Op::Neg(x) => {
            let gx = acc(grads, *x, g.len());
            for (s, &v) in gx.iter_mut().zip(g) {
                *s -= v;
            }
        }
        Op::Exp(x) => {
            let y = node.value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] * y[i];
            }
        }
        Op::Log(x) => {
            let xv = nodes[*x].value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] / xv[i];
            }
        }
        Op::Sqrt(x) => {
            let y = node.value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] * 0.5 / y[i];
            }
        }
        Op::Tanh(x) => {
            let y = node.value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] * (1.0 - y[i] * y[i]);
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] * y[i] * (1.0 - y[i]);
            }
        }
        Op::Softplus(x) => {
            let xv = nodes[*x].value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] * stable_sigmoid(xv[i]);
            }
        }
        Op::Gelu(x) => {
            let xv = nodes[*x].value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                gx[i] += g[i] * gelu_grad(xv[i]);
            }
        }
        Op::Clamp(x, lo, hi) => {
            let xv = nodes[*x].value.clone();
            let gx = acc(grads, *x, g.len());
            for i in 0..g.len() {
                if xv[i] >= *lo && xv[i] <= *hi {
                    gx[i] += g[i];
                }
            }
        }
        Op::Sum(x, axis) => {
            let in_shape = &nodes[*x].shape;
            let gx = acc(grads, *x, numel(in_shape));
            match axis {
                None => {
                    for s in gx.iter_mut() {
                        *s += g[0];
                    }
                }
                Some(ax) => {
                    let (outer, len, inner) = split_axis(in_shape, *ax);
                    for o in 0..outer {
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            for i in 0..inner {
                                gx[base + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
        }
        Op::Mean(x, axis) => {
            let in_shape = &nodes[*x].shape;
            let total = numel(in_shape);
            let gx = acc(grads, *x, total);
            match axis {
                None => {
                    let inv = 1.0 / total as f64;
                    for s in gx.iter_mut() {
                        *s += g[0] * inv;
                    }
                }
                Some(ax) => {
                    let (outer, len, inner) = split_axis(in_shape, *ax);
                    let inv = 1.0 / len as f64;
                    for o in 0..outer {
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            for i in 0..inner {
                                gx[base + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                }
            }
        }
        Op::Softmax(x, axis) => {
            let y = node.value.clone();
            let (outer, len, inner) = split_axis(&node.shape, *axis);
            let gx = acc(grads, *x, y.len());
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let mut dot = 0.0;
                    for a in 0..len {
                        dot += g[at(a)] * y[at(a)];
                    }
                    for a in 0..len {
                        gx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                    }
                }
            }
        }
        Op::Matmul(a, b) => {
            let dims = MatmulDims::resolve(&nodes[*a].shape, &nodes[*b].shape)
                .expect("forward already resolved");
            let av = nodes[*a].value.clone();
            let bv = nodes[*b].value.clone();
            let (m, k, n) = (dims.m, dims.k, dims.n);
            {
                let ga = acc(grads, *a, av.len());
                for t in 0..dims.batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let bt = &bv[t * dims.b_stride..t * dims.b_stride + k * n];
                    let gat = &mut ga[t * dims.a_stride..t * dims.a_stride + m * k];
                    // dA = G · B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gt[i * n + j] * bt[p * n + j];
                            }
                            gat[i * k + p] += s;
                        }
                    }
                }
            }
            {
                let gb = acc(grads, *b, bv.len());
                for t in 0..dims.batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let at = &av[t * dims.a_stride..t * dims.a_stride + m * k];
                    let gbt = &mut gb[t * dims.b_stride..t * dims.b_stride + k * n];
                    // dB = A^T · G
                    for i in 0..m {
                        for p in 0..k {
                            let aip = at[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let grow = &gt[i * n..(i + 1) * n];
                            let brow = &mut gbt[p * n..(p + 1) * n];
                            for j in 0..n {
                                brow[j] += aip * grow[j];
                            }
                        }
                    }
                }
            }
        }
        Op::Concat(inputs, axis) => {
            let (outer, ax_total, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            for &inp in inputs {
                let ax_len = nodes[inp].shape[*axis];
                let gi = acc(grads, inp, numel(&nodes[inp].shape));
                for o in 0..outer {
                    let src = (o * ax_total + offset) * inner;
                    let dst = o * ax_len * inner;
                    for j in 0..ax_len * inner {
                        gi[dst + j] += g[src + j];
                    }
                }
                offset += ax_len;
            }
        }
        Op::Slice(x, axis, start, len) => {
            let in_shape = &nodes[*x].shape;
            let (outer, ax_len, inner) = split_axis(in_shape, *axis);
            let gx = acc(grads, *x, numel(in_shape));
            for o in 0..outer {
                let dst = (o * ax_len + start) * inner;
                let src = o * len * inner;
                for j in 0..len * inner {
                    gx[dst + j] += g[src + j];
                }
            }
        }
        Op::GatherRows(x, rows) => {
            let in_shape = &nodes[*x].shape;
            let row_size: usize = in_shape[1..].iter().product();
            let gx = acc(grads, *x, numel(in_shape));
            for (k, &r) in rows.iter().enumerate() {
                for j in 0..row_size {
                    gx[r * row_size + j] += g[k * row_size + j];
                }
            }
        }
        Op::SwapAxes(x, a, b) => {
            // The inverse of a transposition is itself.
            let back = permute_two(g, &node.shape, *a, *b);
            let gx = acc(grads, *x, back.len());
            for (s, v) in gx.iter_mut().zip(back) {
                *s += v;
            }
        }
        Op::Reshape(x) => {
            let gx = acc(grads, *x, g.len());
            for (s, &v) in gx.iter_mut().zip(g) {
                *s += v;
            }
        }
        Op::Broadcast(x) => {
            let plan = BroadcastPlan::resolve(&nodes[*x].shape, &node.shape)
                .expect("forward already resolved");
            let reduced = plan.reduce(g);
            let gx = acc(grads, *x, numel(&nodes[*x].shape));
            for (s, v) in gx.iter_mut().zip(reduced) {
                *s += v;
            }
        }
    }
}
