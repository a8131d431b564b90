//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Nodes are
//! stored in creation order, so parents always precede children and the
//! reverse pass is a single backwards sweep over the node list.
//!
//! ```
//! use numgraph::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{shape_err, NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Same,
    /// Right operand is a single row repeated over the rows of the left one.
    Rhs,
    /// Left operand is a single row repeated over the rows of the right one.
    Lhs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Transpose(usize),
    Concat { a: usize, b: usize, axis: usize },
    Slice { a: usize, start: usize, axis: usize },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softmax { a: usize, axis: usize },
    Mse(usize, usize),
    L2Sq(usize),
    StopGradient,
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Record of operations for one forward pass.
///
/// A tape is confined to the thread that created it; independent tapes can
/// run concurrently over shared read-only [`ParamStore`]s.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
    no_grad: bool,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
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
            param_nodes: RefCell::new(HashMap::new()),
            no_grad: false,
        }
    }

    /// A tape on which nothing is tracked; forward values only.
    pub fn no_grad() -> Self {
        Self {
            no_grad: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        self.push_shared(Arc::new(value), op, tracked)
    }

    fn push_shared(&self, value: Arc<Tensor>, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            tracked: tracked && !self.no_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Untracked input: receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked input whose gradient can be queried with [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Tracked view of a stored parameter. Repeated requests for the same id
    /// return the same node, so gradients from every use accumulate.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let var = self.push_shared(store.shared(id), Op::Param(id), true);
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, loss.tape), "loss belongs to another tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(NumError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        if root.tracked {
            grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));
        }
        let mut out = Gradients::default();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match node.op {
                Op::Leaf => {
                    out.leaves.insert(id, g);
                }
                Op::Param(pid) => {
                    out.params.insert(pid, g);
                }
                _ => propagate(&nodes, node, &g, &mut grads)?,
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn reduce_rows(g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in g.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn tensor_like(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("gradient shape matches value shape")
}

/// Gradient w.r.t. one side of a broadcasting binary op, reduced to that
/// operand's own shape when it was the repeated row.
fn unbroadcast(shape: &[usize], g: Vec<f64>, repeated: bool) -> Tensor {
    if repeated {
        let cols = *shape.last().expect("broadcast operand has an axis");
        tensor_like(shape, reduce_rows(&g, cols))
    } else {
        tensor_like(shape, g)
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match kind {
        Broadcast::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Rhs => {
            let mut out = Vec::with_capacity(a.len());
            for row in a.data().chunks_exact(b.len()) {
                out.extend(row.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
            }
            out
        }
        Broadcast::Lhs => {
            let mut out = Vec::with_capacity(b.len());
            for row in b.data().chunks_exact(a.len()) {
                out.extend(a.data().iter().zip(row).map(|(&x, &y)| f(x, y)));
            }
            out
        }
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |i: usize| nodes[i].value.as_ref();
    let wants = |i: usize| nodes[i].tracked;
    match node.op {
        Op::Leaf | Op::Param(_) | Op::StopGradient => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if wants(a) {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut ga);
                accumulate(grads, a, tensor_like(av.shape(), ga));
            }
            if wants(b) {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut gb);
                accumulate(grads, b, tensor_like(bv.shape(), gb));
            }
        }
        Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(a) {
                let ga = unbroadcast(val(a).shape(), g.data().to_vec(), matches!(kind, Broadcast::Lhs));
                accumulate(grads, a, ga);
            }
            if wants(b) {
                let gb: Vec<f64> = g.data().iter().map(|v| sign * v).collect();
                accumulate(grads, b, unbroadcast(val(b).shape(), gb, matches!(kind, Broadcast::Rhs)));
            }
        }
        Op::Mul(a, b, kind) => {
            let (av, bv) = (val(a), val(b));
            if wants(a) {
                let ga = match kind {
                    Broadcast::Lhs => zip_broadcast(g, bv, Broadcast::Same, |x, y| x * y),
                    _ => zip_broadcast(g, bv, kind, |x, y| x * y),
                };
                accumulate(grads, a, unbroadcast(av.shape(), ga, matches!(kind, Broadcast::Lhs)));
            }
            if wants(b) {
                let gb = match kind {
                    Broadcast::Rhs => zip_broadcast(g, av, Broadcast::Same, |x, y| x * y),
                    Broadcast::Lhs => zip_broadcast(g, av, Broadcast::Rhs, |x, y| x * y),
                    Broadcast::Same => zip_broadcast(g, av, Broadcast::Same, |x, y| x * y),
                };
                accumulate(grads, b, unbroadcast(bv.shape(), gb, matches!(kind, Broadcast::Rhs)));
            }
        }
        Op::Scale(a, c) => {
            if wants(a) {
                accumulate(grads, a, g.map(|v| v * c));
            }
        }
        Op::Transpose(a) => {
            if wants(a) {
                accumulate(grads, a, transpose(g));
            }
        }
        Op::Concat { a, b, axis } => {
            let (av, bv) = (val(a), val(b));
            let (outer, inner_a, inner_b) = concat_blocks(av.shape(), bv.shape(), axis);
            let mut ga = Vec::with_capacity(av.len());
            let mut gb = Vec::with_capacity(bv.len());
            for block in g.data().chunks_exact(inner_a + inner_b).take(outer) {
                ga.extend_from_slice(&block[..inner_a]);
                gb.extend_from_slice(&block[inner_a..]);
            }
            if wants(a) {
                accumulate(grads, a, tensor_like(av.shape(), ga));
            }
            if wants(b) {
                accumulate(grads, b, tensor_like(bv.shape(), gb));
            }
        }
        Op::Slice { a, start, axis } => {
            if wants(a) {
                let av = val(a);
                let inner: usize = av.shape()[axis + 1..].iter().product();
                let block = av.shape()[axis] * inner;
                let width = g.shape()[axis] * inner;
                let mut ga = vec![0.0; av.len()];
                for (dst, src) in ga.chunks_exact_mut(block).zip(g.data().chunks_exact(width)) {
                    dst[start * inner..start * inner + width].copy_from_slice(src);
                }
                accumulate(grads, a, tensor_like(av.shape(), ga));
            }
        }
        Op::Reshape(a) => {
            if wants(a) {
                accumulate(grads, a, tensor_like(val(a).shape(), g.data().to_vec()));
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            if wants(a) {
                let av = val(a);
                let mut s = g.item();
                if matches!(node.op, Op::Mean(_)) {
                    s /= av.len() as f64;
                }
                accumulate(grads, a, Tensor::full(av.shape().to_vec(), s));
            }
        }
        Op::Relu(a) => {
            if wants(a) {
                let d = val(a).data().iter().zip(g.data()).map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 });
                accumulate(grads, a, tensor_like(g.shape(), d.collect()));
            }
        }
        Op::Tanh(a) => {
            if wants(a) {
                let d = node.value.data().iter().zip(g.data()).map(|(&y, &gv)| gv * (1.0 - y * y));
                accumulate(grads, a, tensor_like(g.shape(), d.collect()));
            }
        }
        Op::Sigmoid(a) => {
            if wants(a) {
                let d = node.value.data().iter().zip(g.data()).map(|(&y, &gv)| gv * y * (1.0 - y));
                accumulate(grads, a, tensor_like(g.shape(), d.collect()));
            }
        }
        Op::Softmax { a, axis } => {
            if wants(a) {
                let y = node.value.as_ref();
                let (outer, len, inner) = axis_blocks(y.shape(), axis);
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| y.data()[at(j)] * g.data()[at(j)]).sum();
                        for j in 0..len {
                            ga[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                        }
                    }
                }
                accumulate(grads, a, tensor_like(y.shape(), ga));
            }
        }
        Op::Mse(a, b) => {
            let (av, bv) = (val(a), val(b));
            let s = 2.0 * g.item() / av.len() as f64;
            let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| s * (x - y)).collect();
            if wants(b) {
                let gb = diff.iter().map(|v| -v).collect();
                accumulate(grads, b, tensor_like(bv.shape(), gb));
            }
            if wants(a) {
                accumulate(grads, a, tensor_like(av.shape(), diff));
            }
        }
        Op::L2Sq(a) => {
            if wants(a) {
                let s = 2.0 * g.item();
                accumulate(grads, a, val(a).map(|v| s * v));
            }
        }
    }
    Ok(())
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    tensor_like(&[c, r], out)
}

/// (outer, extent of `axis`, inner) decomposition of a shape.
fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn concat_blocks(a: &[usize], b: &[usize], axis: usize) -> (usize, usize, usize) {
    let (outer, la, inner) = axis_blocks(a, axis);
    let lb = b[axis];
    (outer, la * inner, lb * inner)
}

fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    let is_row_of = |row: &[usize], full: &[usize]| {
        full.len() == 2
            && match row {
                [c] => *c == full[1],
                [1, c] => *c == full[1],
                _ => false,
            }
    };
    if is_row_of(b, a) {
        Ok(Broadcast::Rhs)
    } else if is_row_of(a, b) {
        Ok(Broadcast::Lhs)
    } else {
        Err(shape_err(op, a, b))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a scalar node.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands belong to different tapes"
        );
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.is_tracked();
        self.tape.push(value, op, tracked)
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.is_tracked() || other.is_tracked();
        self.tape.push(value, op, tracked)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let value = crate::tensor::matmul(&a, &b)?;
        Ok(self.binary(&other, value, Op::MatMul(self.id, other.id)))
    }

    fn elementwise(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let kind = broadcast_kind(name, a.shape(), b.shape())?;
        let shape = match kind {
            Broadcast::Lhs => b.shape().to_vec(),
            _ => a.shape().to_vec(),
        };
        let value = tensor_like(&shape, zip_broadcast(&a, &b, kind, f));
        Ok(self.binary(&other, value, op(self.id, other.id, kind)))
    }

    /// Elementwise sum; a single row broadcasts over the leading batch axis.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v * c), Op::Scale(self.id, c))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(shape_err("transpose", a.shape(), &[]));
        }
        Ok(self.unary(transpose(&a), Op::Transpose(self.id)))
    }

    pub fn concat(&self, other: Var<'t>, axis: usize) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let compatible = a.rank() == b.rank()
            && axis < a.rank()
            && a.shape().iter().zip(b.shape()).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(shape_err("concat", a.shape(), b.shape()));
        }
        let (outer, inner_a, inner_b) = concat_blocks(a.shape(), b.shape(), axis);
        let mut data = Vec::with_capacity(a.len() + b.len());
        for o in 0..outer {
            data.extend_from_slice(&a.data()[o * inner_a..(o + 1) * inner_a]);
            data.extend_from_slice(&b.data()[o * inner_b..(o + 1) * inner_b]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] += b.shape()[axis];
        let value = tensor_like(&shape, data);
        Ok(self.binary(&other, value, Op::Concat { a: self.id, b: other.id, axis }))
    }

    pub fn slice(&self, range: Range<usize>, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() || range.start >= range.end || range.end > a.shape()[axis] {
            return Err(NumError::Contract(format!(
                "slice: range {range:?} on axis {axis} out of bounds for shape {:?}",
                a.shape()
            )));
        }
        let (outer, len, inner) = axis_blocks(a.shape(), axis);
        let mut data = Vec::with_capacity(outer * range.len() * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&a.data()[base + range.start * inner..base + range.end * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = range.len();
        let value = tensor_like(&shape, data);
        Ok(self.unary(value, Op::Slice { a: self.id, start: range.start, axis }))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let value = self.value().as_ref().clone().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let a = self.value();
        let s = a.data().iter().sum::<f64>() / a.len() as f64;
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(self.value().map(|v| v.max(0.0)), Op::Relu(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(self.value().map(|v| 1.0 / (1.0 + (-v).exp())), Op::Sigmoid(self.id))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(NumError::Contract(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                a.shape()
            )));
        }
        let (outer, len, inner) = axis_blocks(a.shape(), axis);
        let mut out = vec![0.0; a.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| a.data()[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (a.data()[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let value = tensor_like(a.shape(), out);
        Ok(self.unary(value, Op::Softmax { a: self.id, axis }))
    }

    /// Mean of squared differences over every element.
    pub fn mse(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err("mse", a.shape(), b.shape()));
        }
        let s = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
        Ok(self.binary(&other, Tensor::scalar(s), Op::Mse(self.id, other.id)))
    }

    /// Sum of squared entries.
    pub fn l2sq(&self) -> Var<'t> {
        let s = self.value().sq_norm();
        self.unary(Tensor::scalar(s), Op::L2Sq(self.id))
    }

    /// Identity in the forward pass; blocks every gradient in the reverse pass.
    pub fn stop_gradient(&self) -> Var<'t> {
        self.tape.push_shared(self.value(), Op::StopGradient, false)
    }
}

/// Result of a reverse pass.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient w.r.t. a tracked leaf created by [`Tape::leaf`] or
    /// [`Tape::param`]. `None` when no path reaches it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        let nodes = var.tape.nodes.borrow();
        match nodes[var.id].op {
            Op::Param(pid) => self.params.get(&pid),
            _ => self.leaves.get(&var.id),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Adds every parameter gradient of `other` into `self`.
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.params {
            match self.params.get_mut(&id) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    self.params.insert(id, g);
                }
            }
        }
    }

    pub fn scale_params(&mut self, c: f64) {
        for g in self.params.values_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    /// Euclidean norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        self.params.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn mean_relu_hand_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let y = x.relu().mean();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn softmax_symmetric() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(x.softmax(0).unwrap().value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn mse_of_self_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.5, -2.0], vec![0.25, 9.0]]));
        let l = x.mse(x).unwrap();
        assert_eq!(l.item(), 0.0);
    }

    #[test]
    fn stop_gradient_blocks_exactly() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.5));
        let y = tape.leaf(Tensor::scalar(-4.0));
        let sx = x.stop_gradient();
        assert_eq!(sx.item(), x.item());
        let z = sx.mul(y).unwrap();
        let g = tape.backward(z).unwrap();
        assert!(g.wrt(x).is_none());
        assert_eq!(g.wrt(y).unwrap().item(), 2.5);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NumError::Contract(_))));
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let b = tape.leaf(Tensor::vector(vec![0.5, -0.5]));
        let y = x.add(b).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn incompatible_broadcast_is_a_shape_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![3, 2]));
        let y = tape.constant(Tensor::zeros(vec![3]));
        let err = x.add(y).unwrap_err();
        assert!(matches!(err, NumError::Shape { op: "add", .. }));
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(2.0));
        let tape = Tape::new();
        let a = tape.param(&store, w);
        let b = tape.param(&store, w);
        let y = a.mul(b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.param(w).unwrap().item(), 4.0);
    }

    #[test]
    fn no_grad_tape_tracks_nothing() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(2.0));
        let tape = Tape::no_grad();
        let y = tape.param(&store, w).l2sq();
        assert!(!y.is_tracked());
        assert!(tape.backward(y).unwrap().param(w).is_none());
    }
}
