//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles during one
//! forward pass. [`Tape::backward`] walks the recording in reverse and returns
//! [`Gradients`] for every node that depends on a leaf. A tape can be
//! differentiated once; build a fresh one for the next pass.
//!
//! ```
//! use omnifield::autodiff::Tape;
//! use omnifield::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::row_vector(vec![1.0, 2.0]).unwrap());
//! let loss = x.scale(3.0).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
//! ```

use std::cell::{Cell, Ref, RefCell};

use crate::tensor::{kernels, Result, Tensor, TensorError};

/// Pre-softmax logit added to masked keys. Finite so that `0 * MASKED` stays 0.
pub const MASKED_LOGIT: f64 = -1e30;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    /// Right operand is a single row repeated over the left operand's rows.
    Rhs,
    /// Left operand is the single row.
    Lhs,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Exp(usize),
    Gelu(usize),
    Square(usize),
    Sqrt(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Softmax(usize),
    LayerNorm { input: usize, inv_std: Vec<f64> },
    MeanRows(usize),
    Sum(usize),
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    strict: bool,
    consumed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            strict: false,
            consumed: Cell::new(false),
        }
    }

    /// A tape whose primitives reject non-finite inputs.
    pub fn strict() -> Self {
        Self {
            strict: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A gradient-tracked input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Constant, false)
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push_raw(value, op, requires_grad)
    }

    fn check_finite(&self, op: &'static str, ids: &[usize]) -> Result<()> {
        if !self.strict {
            return Ok(());
        }
        let nodes = self.nodes.borrow();
        if ids.iter().all(|&i| nodes[i].value.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite(op))
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Concatenates rank-2 tensors along `axis` (0 = token rows, 1 = features).
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat of zero tensors".into()));
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        self.check_finite("concat", &ids)?;
        let value = {
            let nodes = self.nodes.borrow();
            let dims: Vec<(usize, usize)> = ids
                .iter()
                .map(|&i| nodes[i].value.dims2("concat"))
                .collect::<Result<_>>()?;
            let (r0, c0) = dims[0];
            match axis {
                0 => {
                    if let Some(bad) = dims.iter().find(|d| d.1 != c0) {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            lhs: vec![r0, c0],
                            rhs: vec![bad.0, bad.1],
                        });
                    }
                    let rows: usize = dims.iter().map(|d| d.0).sum();
                    let mut data = Vec::with_capacity(rows * c0);
                    for &i in &ids {
                        data.extend_from_slice(nodes[i].value.data());
                    }
                    Tensor::from_parts(vec![rows, c0], data)
                }
                1 => {
                    if let Some(bad) = dims.iter().find(|d| d.0 != r0) {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            lhs: vec![r0, c0],
                            rhs: vec![bad.0, bad.1],
                        });
                    }
                    let cols: usize = dims.iter().map(|d| d.1).sum();
                    let mut data = Vec::with_capacity(r0 * cols);
                    for r in 0..r0 {
                        for &i in &ids {
                            data.extend_from_slice(nodes[i].value.row(r));
                        }
                    }
                    Tensor::from_parts(vec![r0, cols], data)
                }
                _ => {
                    return Err(TensorError::Invalid(format!(
                        "concat axis {axis} out of range for rank 2"
                    )))
                }
            }
        };
        Ok(self.push(value, Op::Concat { parts: ids.clone(), axis }, &ids))
    }

    /// Reverse pass from a scalar loss. Consumes the tape's recording.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            self.consumed.set(false);
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            self.consumed.set(false);
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| nodes[i].requires_grad)
                    .map(|d| Tensor::from_parts(nodes[i].value.shape().to_vec(), d))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(slot);
}

fn add_broadcast_grad(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    full: usize,
    row: usize,
    g: &[f64],
    sign: f64,
) {
    let cols = nodes[row].value.len();
    accumulate(grads, nodes, full, |d| {
        d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
    });
    accumulate(grads, nodes, row, |d| {
        for chunk in g.chunks(cols) {
            for (d, gv) in d.iter_mut().zip(chunk) {
                *d += sign * gv;
            }
        }
    });
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = &node.value;
    match node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[a].value.dims2("matmul").expect("checked in forward");
            let n = nodes[b].value.cols();
            let bv = nodes[b].value.data();
            accumulate(grads, nodes, a, |d| kernels::matmul_nt_acc(g, bv, d, m, n, k));
            let av = nodes[a].value.data();
            accumulate(grads, nodes, b, |d| kernels::matmul_tn_acc(av, g, d, m, k, n));
        }
        Op::Transpose(a) => {
            let (r, c) = nodes[a].value.dims2("transpose").expect("checked in forward");
            accumulate(grads, nodes, a, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            match bc {
                Broadcast::None => {
                    accumulate(grads, nodes, a, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
                    accumulate(grads, nodes, b, |d| {
                        d.iter_mut().zip(g).for_each(|(d, gv)| *d += sign * gv)
                    });
                }
                Broadcast::Rhs => add_broadcast_grad(grads, nodes, a, b, g, sign),
                Broadcast::Lhs => {
                    // a is the row: d(a) = sum over rows of g, d(b) = sign * g
                    let cols = nodes[a].value.len();
                    accumulate(grads, nodes, a, |d| {
                        for chunk in g.chunks(cols) {
                            d.iter_mut().zip(chunk).for_each(|(d, gv)| *d += gv);
                        }
                    });
                    accumulate(grads, nodes, b, |d| {
                        d.iter_mut().zip(g).for_each(|(d, gv)| *d += sign * gv)
                    });
                }
            }
        }
        Op::Mul(a, b, bc) => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            match bc {
                Broadcast::None => {
                    accumulate(grads, nodes, a, |d| {
                        for ((d, gv), bv) in d.iter_mut().zip(g).zip(bv) {
                            *d += gv * bv;
                        }
                    });
                    accumulate(grads, nodes, b, |d| {
                        for ((d, gv), av) in d.iter_mut().zip(g).zip(av) {
                            *d += gv * av;
                        }
                    });
                }
                Broadcast::Rhs | Broadcast::Lhs => {
                    let (full, row, fv, rv) = if bc == Broadcast::Rhs {
                        (a, b, av, bv)
                    } else {
                        (b, a, bv, av)
                    };
                    let cols = rv.len();
                    accumulate(grads, nodes, full, |d| {
                        for (i, (d, gv)) in d.iter_mut().zip(g).enumerate() {
                            *d += gv * rv[i % cols];
                        }
                    });
                    accumulate(grads, nodes, row, |d| {
                        for (i, (gv, fv)) in g.iter().zip(fv).enumerate() {
                            d[i % cols] += gv * fv;
                        }
                    });
                }
            }
        }
        Op::Scale(a, s) => {
            accumulate(grads, nodes, a, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += s * gv));
        }
        Op::Exp(a) => {
            let y = out.data();
            accumulate(grads, nodes, a, |d| {
                for ((d, gv), y) in d.iter_mut().zip(g).zip(y) {
                    *d += gv * y;
                }
            });
        }
        Op::Gelu(a) => {
            let x = nodes[a].value.data();
            accumulate(grads, nodes, a, |d| {
                for ((d, gv), &x) in d.iter_mut().zip(g).zip(x) {
                    *d += gv * gelu_grad(x);
                }
            });
        }
        Op::Square(a) => {
            let x = nodes[a].value.data();
            accumulate(grads, nodes, a, |d| {
                for ((d, gv), x) in d.iter_mut().zip(g).zip(x) {
                    *d += 2.0 * x * gv;
                }
            });
        }
        Op::Sqrt(a) => {
            let y = out.data();
            accumulate(grads, nodes, a, |d| {
                for ((d, gv), y) in d.iter_mut().zip(g).zip(y) {
                    *d += gv * 0.5 / y;
                }
            });
        }
        Op::Concat { ref parts, axis } => {
            let cols = out.cols();
            let mut offset = 0;
            for &p in parts {
                let (pr, pc) = nodes[p].value.dims2("concat").expect("checked in forward");
                if axis == 0 {
                    let span = &g[offset * cols..(offset + pr) * cols];
                    accumulate(grads, nodes, p, |d| d.iter_mut().zip(span).for_each(|(d, gv)| *d += gv));
                    offset += pr;
                } else {
                    accumulate(grads, nodes, p, |d| {
                        for r in 0..pr {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            d[r * pc..(r + 1) * pc]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, gv)| *d += gv);
                        }
                    });
                    offset += pc;
                }
            }
        }
        Op::Softmax(a) => {
            let y = out.data();
            let cols = out.cols();
            accumulate(grads, nodes, a, |d| {
                for ((d, g), y) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += y * (g - dot);
                    }
                }
            });
        }
        Op::LayerNorm { input, ref inv_std } => {
            let y = out.data();
            let cols = out.cols();
            let n = cols as f64;
            accumulate(grads, nodes, input, |d| {
                for (r, ((d, g), y)) in d
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(y.chunks(cols))
                    .enumerate()
                {
                    let mean_g: f64 = g.iter().sum::<f64>() / n;
                    let mean_gy: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / n;
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += inv_std[r] * (g - mean_g - y * mean_gy);
                    }
                }
            });
        }
        Op::MeanRows(a) => {
            let rows = nodes[a].value.rows();
            let inv = 1.0 / rows as f64;
            let cols = out.len();
            accumulate(grads, nodes, a, |d| {
                for chunk in d.chunks_mut(cols) {
                    chunk.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * inv);
                }
            });
        }
        Op::Sum(a) => {
            let gv = g[0];
            accumulate(grads, nodes, a, |d| d.iter_mut().for_each(|d| *d += gv));
        }
        Op::Slice { input, axis, start } => {
            let cols = nodes[input].value.cols();
            let (r, c) = out.dims2("slice").expect("checked in forward");
            accumulate(grads, nodes, input, |d| {
                if axis == 0 {
                    d[start * cols..(start + r) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, gv)| *d += gv);
                } else {
                    for i in 0..r {
                        d[i * cols + start..i * cols + start + c]
                            .iter_mut()
                            .zip(&g[i * c..(i + 1) * c])
                            .for_each(|(d, gv)| *d += gv);
                    }
                }
            });
        }
        Op::Reshape(a) => {
            accumulate(grads, nodes, a, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, *self.tape.value(self.id))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        NodeId(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.value(self.id))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        self.tape.check_finite(name, &[self.id])?;
        let value = self.tape.value(self.id).map(f);
        Ok(self.tape.push(value, op, &[self.id]))
    }

    fn broadcast_kind(&self, rhs: &Var<'t>, op: &'static str) -> Result<Broadcast> {
        let a = self.tape.value(self.id);
        let b = self.tape.value(rhs.id);
        if a.shape() == b.shape() {
            return Ok(Broadcast::None);
        }
        let mismatch = || TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let (ar, ac) = a.dims2(op).map_err(|_| mismatch())?;
        let (br, bc) = b.dims2(op).map_err(|_| mismatch())?;
        if ac != bc {
            return Err(mismatch());
        }
        match (ar, br) {
            (_, 1) => Ok(Broadcast::Rhs),
            (1, _) => Ok(Broadcast::Lhs),
            _ => Err(mismatch()),
        }
    }

    fn binary(
        self,
        rhs: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var<'t>> {
        self.tape.check_finite(name, &[self.id, rhs.id])?;
        let bc = self.broadcast_kind(&rhs, name)?;
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(rhs.id);
            match bc {
                Broadcast::None => Tensor::from_parts(
                    a.shape().to_vec(),
                    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
                ),
                Broadcast::Rhs => {
                    let c = b.len();
                    Tensor::from_parts(
                        a.shape().to_vec(),
                        a.data()
                            .iter()
                            .enumerate()
                            .map(|(i, &x)| f(x, b.data()[i % c]))
                            .collect(),
                    )
                }
                Broadcast::Lhs => {
                    let c = a.len();
                    Tensor::from_parts(
                        b.shape().to_vec(),
                        b.data()
                            .iter()
                            .enumerate()
                            .map(|(i, &y)| f(a.data()[i % c], y))
                            .collect(),
                    )
                }
            }
        };
        Ok(self.tape.push(value, make(self.id, rhs.id, bc), &[self.id, rhs.id]))
    }

    /// Elementwise sum; a 1×C operand is broadcast over the other's rows.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, s), |x| s * x)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Var<'t>> {
        self.unary("gelu", Op::Gelu(self.id), gelu)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary("square", Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary("sqrt", Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_finite("matmul", &[self.id, rhs.id])?;
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(rhs.id);
            a.matmul(&b)?
        };
        Ok(self.tape.push(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.tape.check_finite("transpose", &[self.id])?;
        let value = self.tape.value(self.id).transpose()?;
        Ok(self.tape.push(value, Op::Transpose(self.id), &[self.id]))
    }

    /// Softmax over the last axis. `mask` is added to the logits first and
    /// must have the logits' shape or be a single row broadcast over rows.
    pub fn softmax(self, mask: Option<&Tensor>) -> Result<Var<'t>> {
        self.tape.check_finite("softmax", &[self.id])?;
        let value = {
            let x = self.tape.value(self.id);
            let (_, cols) = x.dims2("softmax")?;
            if let Some(m) = mask {
                let ok = m.shape() == x.shape() || m.len() == cols;
                if !ok {
                    return Err(TensorError::ShapeMismatch {
                        op: "softmax",
                        lhs: x.shape().to_vec(),
                        rhs: m.shape().to_vec(),
                    });
                }
            }
            let mut out = x.data().to_vec();
            for (r, row) in out.chunks_mut(cols).enumerate() {
                if let Some(m) = mask {
                    let mrow = if m.len() == cols { m.data() } else { m.row(r) };
                    row.iter_mut().zip(mrow).for_each(|(v, mv)| *v += mv);
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        };
        Ok(self.tape.push(value, Op::Softmax(self.id), &[self.id]))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(self, eps: f64) -> Result<Var<'t>> {
        self.tape.check_finite("layer_norm", &[self.id])?;
        let (value, inv_std) = {
            let x = self.tape.value(self.id);
            let (rows, cols) = x.dims2("layer_norm")?;
            let mut out = Vec::with_capacity(rows * cols);
            let mut inv_std = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std.push(inv);
                out.extend(row.iter().map(|v| (v - mean) * inv));
            }
            (Tensor::from_parts(vec![rows, cols], out), inv_std)
        };
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                input: self.id,
                inv_std,
            },
            &[self.id],
        ))
    }

    /// Mean over the token (row) axis: R×C → 1×C.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        self.tape.check_finite("mean_rows", &[self.id])?;
        let value = {
            let x = self.tape.value(self.id);
            let (rows, cols) = x.dims2("mean_rows")?;
            let mut acc = vec![0.0; cols];
            for r in 0..rows {
                acc.iter_mut().zip(x.row(r)).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= rows as f64);
            Tensor::from_parts(vec![1, cols], acc)
        };
        Ok(self.tape.push(value, Op::MeanRows(self.id), &[self.id]))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.tape.check_finite("sum", &[self.id])?;
        let value = Tensor::scalar(self.tape.value(self.id).sum());
        Ok(self.tape.push(value, Op::Sum(self.id), &[self.id]))
    }

    /// Contiguous block `start..start+len` along `axis` of a rank-2 tensor.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        self.tape.check_finite("slice", &[self.id])?;
        let value = {
            let x = self.tape.value(self.id);
            let (rows, cols) = x.dims2("slice")?;
            let extent = if axis == 0 { rows } else { cols };
            if axis > 1 || len == 0 || start + len > extent {
                return Err(TensorError::SliceRange {
                    axis,
                    start,
                    end: start + len,
                    shape: x.shape().to_vec(),
                });
            }
            if axis == 0 {
                Tensor::from_parts(vec![len, cols], x.data()[start * cols..(start + len) * cols].to_vec())
            } else {
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&x.row(r)[start..start + len]);
                }
                Tensor::from_parts(vec![rows, len], data)
            }
        };
        Ok(self.tape.push(
            value,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape.check_finite("reshape", &[self.id])?;
        let value = self.tape.value(self.id).reshaped(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.id), &[self.id]))
    }
}

/// Gradients produced by one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if the loss
    /// does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_id(var.id())
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but yields explicit zeros for unreached nodes.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}
