//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node in creation order. Since a
//! node can only reference nodes created before it, creation order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Parameters enter a graph through [`Graph::param`]; each parameter gets one
//! node per graph no matter how many times it is requested, so gradients from
//! every use accumulate into the same buffer.

use std::cell::RefCell;
use std::collections::HashMap;

use super::tensor::{matmul_at_acc, matmul_bt_acc, matmul_raw};
use super::{ParamId, Parameters, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Stack(Vec<Var>),
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
        frozen: Option<usize>,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Softmax {
        src: Var,
        negate: bool,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LnClamp {
        src: Var,
        floor: f64,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        width: usize,
    },
    MaxLast {
        src: Var,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradient buffers kept between graphs, keyed by length. Reusing them
/// avoids fresh page-faulting allocations for large parameter gradients.
#[derive(Debug, Default)]
pub struct Workspace {
    free: HashMap<usize, Vec<Vec<f64>>>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn take(&mut self, len: usize) -> Vec<f64> {
        match self.free.get_mut(&len).and_then(Vec::pop) {
            Some(mut buf) => {
                buf.fill(0.0);
                buf
            }
            None => vec![0.0; len],
        }
    }

    fn give(&mut self, buf: Vec<f64>) {
        self.free.entry(buf.len()).or_default().push(buf);
    }
}

/// Recorded computation plus gradient buffers.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
    workspace: RefCell<Workspace>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty graph drawing gradient buffers from `workspace`.
    pub fn with_workspace(workspace: Workspace) -> Self {
        Self {
            workspace: RefCell::new(workspace),
            ..Self::default()
        }
    }

    /// Consumes the graph, returning its gradient buffers for reuse.
    pub fn into_workspace(self) -> Workspace {
        let mut ws = self.workspace.into_inner();
        for buf in self.grads.into_iter().flatten() {
            ws.give(buf);
        }
        ws
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Node for parameter `id`, created on first request.
    pub fn param(&mut self, params: &Parameters, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_checked(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| -x);
        self.push_checked("neg", value, Op::Neg(a), &[a])
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var, TensorError> {
        let value = self.value(a).scaled(alpha);
        self.push_checked("scale", value, Op::Scale(a, alpha), &[a])
    }

    /// Elementwise product with a fixed array (dropout masks).
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.len() != factors.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                left: ta.shape().to_vec(),
                right: vec![factors.len()],
            });
        }
        let data = ta.data().iter().zip(&factors).map(|(x, f)| x * f).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_checked("mul_const", value, Op::MulConst(a, factors), &[a])
    }

    /// `m (r×c) + row (c)` added to every row; also accepts a 1-D `m` of length `c`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var, TensorError> {
        let (tm, tr) = (self.value(m), self.value(row));
        let cols = *tm.shape().last().unwrap_or(&0);
        if tr.ndim() != 1 || tr.len() != cols || tm.ndim() == 0 {
            return Err(shape_err("add_row", tm, tr));
        }
        let data = tm
            .data()
            .chunks(cols.max(1))
            .flat_map(|r| r.iter().zip(tr.data()).map(|(x, b)| x + b))
            .collect();
        let value = Tensor::new(tm.shape().to_vec(), data)?;
        self.push_checked("add_row", value, Op::AddRow(m, row), &[m, row])
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (Some((m, k)), Some((k2, n))) = (ta.dims2(), tb.dims2()) else {
            return Err(shape_err("matmul", ta, tb));
        };
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        self.push_checked("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let Some((r, c)) = ta.dims2() else {
            return Err(TensorError::Rank {
                op: "transpose",
                expected: 2,
                shape: ta.shape().to_vec(),
            });
        };
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        self.push_checked("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let value = Tensor::new(shape.to_vec(), ta.data().to_vec()).map_err(|_| TensorError::ShapeMismatch {
            op: "reshape",
            left: ta.shape().to_vec(),
            right: shape.to_vec(),
        })?;
        self.push_checked("reshape", value, Op::Reshape(a), &[a])
    }

    /// Joins 1-D or 2-D tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() || base.len() > 2 {
            return Err(TensorError::Rank {
                op: "concat",
                expected: axis + 1,
                shape: base,
            });
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let data = if axis == 0 {
            parts
                .iter()
                .flat_map(|p| self.value(*p).data().iter().copied())
                .collect()
        } else {
            let rows = base[0];
            let mut data = Vec::with_capacity(rows * out_shape[1]);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(r));
                }
            }
            data
        };
        let value = Tensor::new(out_shape, data)?;
        self.push_checked(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Stacks identically shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty { op: "stack" })?;
        let base = self.value(*first).clone();
        let mut data = Vec::with_capacity(base.len() * parts.len());
        for p in parts {
            let t = self.value(*p);
            if t.shape() != base.shape() {
                return Err(shape_err("stack", &base, t));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(base.shape());
        let value = Tensor::new(shape, data)?;
        self.push_checked("stack", value, Op::Stack(parts.to_vec()), parts)
    }

    /// Half-open range `[start, end)` along `axis` of a 1-D or 2-D tensor.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let t = self.value(src);
        let shape = t.shape().to_vec();
        if axis >= shape.len() || shape.len() > 2 || start > end || end > shape[axis] {
            return Err(TensorError::SliceRange {
                shape,
                axis,
                start,
                end,
            });
        }
        let (data, out_shape) = match (shape.len(), axis) {
            (1, _) => (t.data()[start..end].to_vec(), vec![end - start]),
            (_, 0) => {
                let c = shape[1];
                (t.data()[start * c..end * c].to_vec(), vec![end - start, c])
            }
            _ => {
                let (r, c) = (shape[0], shape[1]);
                let mut d = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    d.extend_from_slice(&t.data()[i * c + start..i * c + end]);
                }
                (d, vec![r, end - start])
            }
        };
        let value = Tensor::new(out_shape, data)?;
        self.push_checked("slice", value, Op::Slice { src, axis, start }, &[src])
    }

    /// Row `r` of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, src: Var, r: usize) -> Result<Var, TensorError> {
        let cols = self.shape(src).get(1).copied().unwrap_or(0);
        let s = self.slice(src, 0, r, r + 1)?;
        self.reshape(s, &[cols])
    }

    /// Looks up rows of a `V×d` table. Gradient never flows into `frozen`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], frozen: Option<usize>) -> Result<Var, TensorError> {
        let t = self.value(table);
        let Some((rows, cols)) = t.dims2() else {
            return Err(TensorError::Rank {
                op: "gather_rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        };
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, len: rows });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        self.push_checked(
            "gather_rows",
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
                frozen,
            },
            &[table],
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_checked("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::Empty { op: "mean" });
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push_checked("mean", value, Op::Mean(a), &[a])
    }

    /// Column sums of a 2-D tensor (`r×c → c`).
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let Some((r, c)) = t.dims2() else {
            return Err(TensorError::Rank {
                op: "sum_rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        };
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&t.data()[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        let value = Tensor::vector(out);
        self.push_checked("sum_rows", value, Op::SumRows(a), &[a])
    }

    fn normalize_last_axis(&mut self, src: Var, negate: bool) -> Result<Var, TensorError> {
        let t = self.value(src);
        let cols = *t.shape().last().ok_or(TensorError::Rank {
            op: "softmax",
            expected: 1,
            shape: vec![],
        })?;
        let sign = if negate { -1.0 } else { 1.0 };
        let mut data = Vec::with_capacity(t.len());
        for row in t.data().chunks(cols.max(1)) {
            data.extend(softmax_slice(row, sign));
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let name = if negate { "softmin" } else { "softmax" };
        self.push_checked(name, value, Op::Softmax { src, negate }, &[src])
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, src: Var) -> Result<Var, TensorError> {
        self.normalize_last_axis(src, false)
    }

    /// Softmin along the last axis, evaluated as `softmax(-x)`.
    pub fn softmin(&mut self, src: Var) -> Result<Var, TensorError> {
        self.normalize_last_axis(src, true)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(sigmoid);
        self.push_checked("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(f64::tanh);
        self.push_checked("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push_checked("relu", value, Op::Relu(a), &[a])
    }

    /// `ln(max(x, floor))`; zero gradient where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x.max(floor).ln());
        self.push_checked("ln", value, Op::LnClamp { src: a, floor }, &[a])
    }

    /// Valid 1-D convolution along the width axis.
    ///
    /// `input` is `C×W`, `kernel` is `F×(C·k)` laid out channel-major, so
    /// `kernel[f, c·k + j]` multiplies `input[c, t + j]`. Output is `F×(W−k+1)`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, width: usize) -> Result<Var, TensorError> {
        let (ti, tk) = (self.value(input), self.value(kernel));
        let (Some((channels, len)), Some((filters, span))) = (ti.dims2(), tk.dims2()) else {
            return Err(shape_err("conv1d", ti, tk));
        };
        if width == 0 || span != channels * width || len < width {
            return Err(shape_err("conv1d", ti, tk));
        }
        let out_len = len - width + 1;
        let mut out = vec![0.0; filters * out_len];
        for f in 0..filters {
            let kf = &tk.data()[f * span..(f + 1) * span];
            for t in 0..out_len {
                let mut acc = 0.0;
                for c in 0..channels {
                    let x = &ti.data()[c * len + t..c * len + t + width];
                    let w = &kf[c * width..(c + 1) * width];
                    acc += x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                }
                out[f * out_len + t] = acc;
            }
        }
        let value = Tensor::new(vec![filters, out_len], out)?;
        self.push_checked("conv1d", value, Op::Conv1d { input, kernel, width }, &[input, kernel])
    }

    /// Row-wise maximum of a 2-D tensor (`r×c → r`). Ties go to the first index.
    pub fn max_last(&mut self, src: Var) -> Result<Var, TensorError> {
        let t = self.value(src);
        let Some((r, c)) = t.dims2() else {
            return Err(TensorError::Rank {
                op: "max_last",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        };
        if c == 0 {
            return Err(TensorError::Empty { op: "max_last" });
        }
        let mut argmax = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r);
        for row in t.data().chunks(c) {
            let (idx, best) = row.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
            argmax.push(idx);
            out.push(best);
        }
        let value = Tensor::vector(out);
        self.push_checked("max_last", value, Op::MaxLast { src, argmax }, &[src])
    }

    /// Reverse sweep from a scalar `loss`. Clears gradients of any earlier sweep.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let stale = std::mem::replace(&mut self.grads, grads);
        let mut ws = self.workspace.borrow_mut();
        for buf in stale.into_iter().flatten() {
            ws.give(buf);
        }
        Ok(())
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.value(v).shape().to_vec(), g.clone()).ok()
    }

    /// Gradients of every parameter that entered the graph; zero-filled when
    /// the parameter did not influence the loss.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = self.grad(v).unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Calls `f` with the raw gradient of every parameter that received one,
    /// without copying. Parameters untouched by the last sweep are skipped.
    pub fn for_each_param_grad(&self, mut f: impl FnMut(ParamId, &[f64])) {
        for (&id, &v) in &self.params {
            if let Some(Some(g)) = self.grads.get(v.0) {
                f(id, g);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let buf =
            grads[target.0].get_or_insert_with(|| self.workspace.borrow_mut().take(self.nodes[target.0].value.len()));
        f(buf);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |buf| add_into(buf, g));
                self.accumulate(grads, *b, |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |buf| add_into(buf, g));
                self.accumulate(grads, *b, |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(vb) {
                        *o += x * y;
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(g).zip(va) {
                        *o += x * y;
                    }
                });
            }
            Op::Neg(a) => self.accumulate(grads, *a, |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o -= x)),
            Op::Scale(a, alpha) => self.accumulate(grads, *a, |buf| {
                buf.iter_mut().zip(g).for_each(|(o, x)| *o += alpha * x)
            }),
            Op::MulConst(a, factors) => self.accumulate(grads, *a, |buf| {
                for ((o, x), f) in buf.iter_mut().zip(g).zip(factors) {
                    *o += x * f;
                }
            }),
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, |buf| add_into(buf, g));
                let cols = self.value(*row).len();
                self.accumulate(grads, *row, |buf| {
                    for chunk in g.chunks(cols.max(1)) {
                        add_into(buf, chunk);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2().expect("matmul lhs is 2-D");
                let n = tb.dims2().expect("matmul rhs is 2-D").1;
                self.accumulate(grads, *a, |buf| matmul_bt_acc(g, tb.data(), m, n, k, buf));
                self.accumulate(grads, *b, |buf| matmul_at_acc(ta.data(), g, m, k, n, buf));
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().expect("transpose of 2-D");
                self.accumulate(grads, *a, |buf| {
                    for x in 0..r {
                        for y in 0..c {
                            buf[x * c + y] += g[y * r + x];
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |buf| add_into(buf, g)),
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        self.accumulate(grads, *p, |buf| add_into(buf, &g[offset..offset + n]));
                        offset += n;
                    }
                } else {
                    let total_cols = *node.value.shape().last().expect("2-D concat");
                    let rows = node.value.shape()[0];
                    let mut col = 0;
                    for p in parts {
                        let pc = self.value(*p).shape()[1];
                        self.accumulate(grads, *p, |buf| {
                            for r in 0..rows {
                                let src = &g[r * total_cols + col..r * total_cols + col + pc];
                                add_into(&mut buf[r * pc..(r + 1) * pc], src);
                            }
                        });
                        col += pc;
                    }
                }
            }
            Op::Stack(parts) => {
                let n = self.value(parts[0]).len();
                for (k, p) in parts.iter().enumerate() {
                    self.accumulate(grads, *p, |buf| add_into(buf, &g[k * n..(k + 1) * n]));
                }
            }
            Op::Slice { src, axis, start } => {
                let shape = self.value(*src).shape().to_vec();
                self.accumulate(grads, *src, |buf| match (shape.len(), axis) {
                    (1, _) => add_into(&mut buf[*start..*start + g.len()], g),
                    (_, 0) => {
                        let c = shape[1];
                        add_into(&mut buf[start * c..start * c + g.len()], g)
                    }
                    _ => {
                        let (r, c) = (shape[0], shape[1]);
                        let w = g.len() / r.max(1);
                        for i in 0..r {
                            add_into(&mut buf[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                        }
                    }
                });
            }
            Op::GatherRows { table, ids, frozen } => {
                let cols = self.value(*table).shape()[1];
                self.accumulate(grads, *table, |buf| {
                    for (k, &id) in ids.iter().enumerate() {
                        if Some(id) == *frozen {
                            continue;
                        }
                        add_into(&mut buf[id * cols..(id + 1) * cols], &g[k * cols..(k + 1) * cols]);
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |buf| buf.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, |buf| buf.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::SumRows(a) => {
                let c = g.len();
                self.accumulate(grads, *a, |buf| {
                    for chunk in buf.chunks_mut(c.max(1)) {
                        add_into(chunk, g);
                    }
                });
            }
            Op::Softmax { src, negate } => {
                let y = node.value.data();
                let cols = *node.value.shape().last().expect("softmax rank >= 1");
                let sign = if *negate { -1.0 } else { 1.0 };
                self.accumulate(grads, *src, |buf| {
                    for ((o, yr), gr) in buf
                        .chunks_mut(cols.max(1))
                        .zip(y.chunks(cols.max(1)))
                        .zip(g.chunks(cols.max(1)))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((ob, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                            *ob += sign * yv * (gv - dot);
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |buf| {
                    for ((o, gv), yv) in buf.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |buf| {
                    for ((o, gv), yv) in buf.iter_mut().zip(g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |buf| {
                    for ((o, gv), xv) in buf.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::LnClamp { src, floor } => {
                let x = self.value(*src).data();
                self.accumulate(grads, *src, |buf| {
                    for ((o, gv), xv) in buf.iter_mut().zip(g).zip(x) {
                        if *xv > *floor {
                            *o += gv / xv;
                        }
                    }
                });
            }
            Op::Conv1d { input, kernel, width } => {
                let (ti, tk) = (self.value(*input), self.value(*kernel));
                let (channels, len) = ti.dims2().expect("conv input is 2-D");
                let (filters, span) = tk.dims2().expect("conv kernel is 2-D");
                let out_len = len - width + 1;
                self.accumulate(grads, *input, |buf| {
                    for f in 0..filters {
                        let kf = &tk.data()[f * span..(f + 1) * span];
                        for t in 0..out_len {
                            let gv = g[f * out_len + t];
                            for c in 0..channels {
                                for j in 0..*width {
                                    buf[c * len + t + j] += gv * kf[c * width + j];
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *kernel, |buf| {
                    for f in 0..filters {
                        for t in 0..out_len {
                            let gv = g[f * out_len + t];
                            for c in 0..channels {
                                for j in 0..*width {
                                    buf[f * span + c * width + j] += gv * ti.data()[c * len + t + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::MaxLast { src, argmax } => {
                let c = self.value(*src).shape()[1];
                self.accumulate(grads, *src, |buf| {
                    for (r, &j) in argmax.iter().enumerate() {
                        buf[r * c + j] += g[r];
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

/// Max-shifted `softmax(sign · row)`.
pub fn softmax_slice(row: &[f64], sign: f64) -> Vec<f64> {
    let max = row.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (sign * v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
