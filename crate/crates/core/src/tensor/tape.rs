use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::kernels::{self, dims2};
use super::Tensor;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// Pointwise nonlinearities with a closed-form derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => kernels::sigmoid(x),
            Activation::Relu => x.max(S::zero()),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Activation::Tanh => S::one() - y * y,
            Activation::Sigmoid => y * (S::one() - y),
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, p: usize },
    MatMulNt { a: usize, b: usize, m: usize, k: usize, p: usize },
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Maximum(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    Act(usize, Activation),
    Softmax { input: usize, axis: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { input: usize, offset: usize },
    SliceCols { input: usize, start: usize },
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Cosine { a: usize, b: usize, cos: S, na: S, nb: S },
    Bce { p: usize, targets: Vec<S>, eps: S },
    SmoothL1 { input: usize, target: S },
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records differentiable operations in execution order.
///
/// A tape is single-threaded; independent tapes share nothing and may run
/// on different threads. Node ids increase monotonically, so reverse id
/// order is a valid topological order for backpropagation.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    check_finite: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// A tape with non-finite detection enabled in debug builds.
    pub fn new() -> Self {
        Self::with_finite_check(cfg!(debug_assertions))
    }

    pub fn with_finite_check(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(1024)),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pushes a leaf; gradients are tracked when `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor<S>) -> Result<Var<'_, S>> {
        let rg = tensor.requires_grad();
        self.push("leaf", tensor, Op::Leaf, rg)
    }

    /// Pushes a leaf that never receives gradients.
    pub fn constant(&self, tensor: Tensor<S>) -> Var<'_, S> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value: Rc::new(tensor.with_requires_grad(false)),
                op: Op::Leaf,
                requires_grad: false,
            });
            nodes.len() - 1
        };
        Var { tape: self, id }
    }

    pub fn scalar(&self, x: S) -> Var<'_, S> {
        self.constant(Tensor::scalar(x))
    }

    fn push(&self, name: &'static str, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Result<Var<'_, S>> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value(&self, id: usize) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Backpropagates from a scalar root, visiting each node at most once.
    pub fn backward(&self, root: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![S::one()]);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(nodes: &[Node<S>], grads: &mut [Option<Vec<S>>], id: usize, g: Vec<S>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, &x)| *b += x),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node<S: Scalar>(nodes: &[Node<S>], node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
    let val = |id: usize| -> &Tensor<S> { &nodes[id].value };
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, p } => {
            if nodes[a].requires_grad {
                let ga = kernels::matmul_nt(g, val(b).data(), m, p, k);
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].requires_grad {
                let gb = kernels::matmul_tn(val(a).data(), g, m, k, p);
                accumulate(nodes, grads, b, gb);
            }
        }
        &Op::MatMulNt { a, b, m, k, p } => {
            if nodes[a].requires_grad {
                let ga = kernels::matmul(g, val(b).data(), m, p, k);
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].requires_grad {
                let gb = kernels::matmul_tn(g, val(a).data(), m, p, k);
                accumulate(nodes, grads, b, gb);
            }
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.to_vec());
            accumulate(nodes, grads, b, g.to_vec());
        }
        &Op::AddRow(a, b) => {
            accumulate(nodes, grads, a, g.to_vec());
            if nodes[b].requires_grad {
                let n = val(b).numel();
                let mut gb = vec![S::zero(); n];
                for chunk in g.chunks(n) {
                    gb.iter_mut().zip(chunk).for_each(|(s, &x)| *s += x);
                }
                accumulate(nodes, grads, b, gb);
            }
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, g.to_vec());
            accumulate(nodes, grads, b, g.iter().map(|&x| -x).collect());
        }
        &Op::Mul(a, b) => {
            if nodes[a].requires_grad {
                let ga = g.iter().zip(val(b).data()).map(|(&x, &y)| x * y).collect();
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].requires_grad {
                let gb = g.iter().zip(val(a).data()).map(|(&x, &y)| x * y).collect();
                accumulate(nodes, grads, b, gb);
            }
        }
        &Op::Maximum(a, b) => {
            let (da, db) = val(a).data().iter().zip(val(b).data()).zip(g).fold(
                (Vec::with_capacity(g.len()), Vec::with_capacity(g.len())),
                |(mut da, mut db), ((&x, &y), &gi)| {
                    if x >= y {
                        da.push(gi);
                        db.push(S::zero());
                    } else {
                        da.push(S::zero());
                        db.push(gi);
                    }
                    (da, db)
                },
            );
            accumulate(nodes, grads, a, da);
            accumulate(nodes, grads, b, db);
        }
        &Op::Scale(a, c) => accumulate(nodes, grads, a, g.iter().map(|&x| x * c).collect()),
        &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(nodes, grads, a, g.to_vec()),
        &Op::Act(a, act) => {
            let ga = val(a)
                .data()
                .iter()
                .zip(node.value.data())
                .zip(g)
                .map(|((&x, &y), &gi)| gi * act.derivative(x, y))
                .collect();
            accumulate(nodes, grads, a, ga);
        }
        &Op::Softmax { input, axis } => {
            let y = node.value.data();
            let mut gx = vec![S::zero(); y.len()];
            for lane in softmax_lanes(node.value.shape(), axis) {
                let s: S = lane.clone().map(|i| g[i] * y[i]).sum();
                for i in lane {
                    gx[i] = y[i] * (g[i] - s);
                }
            }
            accumulate(nodes, grads, input, gx);
        }
        Op::Concat { parts, axis } => {
            let out_cols = node.value.cols();
            let mut col = 0;
            let mut off = 0;
            for &part in parts {
                let pv = val(part);
                if *axis == 0 {
                    let n = pv.numel();
                    accumulate(nodes, grads, part, g[off..off + n].to_vec());
                    off += n;
                } else {
                    let (r, c) = pv.dims2();
                    let mut gp = Vec::with_capacity(r * c);
                    for i in 0..r {
                        gp.extend_from_slice(&g[i * out_cols + col..i * out_cols + col + c]);
                    }
                    accumulate(nodes, grads, part, gp);
                    col += c;
                }
            }
        }
        &Op::Narrow { input, offset } => {
            if nodes[input].requires_grad {
                let mut gi = vec![S::zero(); val(input).numel()];
                gi[offset..offset + g.len()].copy_from_slice(g);
                accumulate(nodes, grads, input, gi);
            }
        }
        &Op::SliceCols { input, start } => {
            if nodes[input].requires_grad {
                let (r, c) = val(input).dims2();
                let w = node.value.cols();
                let mut gi = vec![S::zero(); r * c];
                for i in 0..r {
                    gi[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                accumulate(nodes, grads, input, gi);
            }
        }
        &Op::Transpose(a) => {
            let (r, c) = val(a).dims2();
            accumulate(nodes, grads, a, kernels::transpose(g, c, r));
        }
        &Op::Sum(a) => accumulate(nodes, grads, a, vec![g[0]; val(a).numel()]),
        &Op::Mean(a) => {
            let n = val(a).numel();
            accumulate(nodes, grads, a, vec![g[0] / S::of(n as f64); n]);
        }
        &Op::Cosine { a, b, cos, na, nb } => {
            let (av, bv) = (val(a).data(), val(b).data());
            let inv = S::one() / (na * nb);
            if nodes[a].requires_grad {
                let ga = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| g[0] * (y * inv - cos * x / (na * na)))
                    .collect();
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].requires_grad {
                let gb = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| g[0] * (x * inv - cos * y / (nb * nb)))
                    .collect();
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::Bce { p, targets, eps } => {
            let n = S::of(targets.len() as f64);
            let gp = val(*p)
                .data()
                .iter()
                .zip(targets)
                .map(|(&pi, &y)| {
                    if pi <= *eps || pi >= S::one() - *eps {
                        S::zero()
                    } else {
                        g[0] * ((S::one() - y) / (S::one() - pi) - y / pi) / n
                    }
                })
                .collect();
            accumulate(nodes, grads, *p, gp);
        }
        &Op::SmoothL1 { input, target } => {
            let d = val(input).data()[0] - target;
            let slope = if d.abs() < S::one() { d } else { d.signum() };
            accumulate(nodes, grads, input, vec![g[0] * slope]);
        }
    }
}

/// Index lanes for a softmax along `axis` of a rank-1 or rank-2 shape.
fn softmax_lanes(shape: &[usize], axis: usize) -> Vec<std::iter::StepBy<std::ops::Range<usize>>> {
    let (r, c) = dims2(shape);
    if shape.len() == 1 || axis == 1 {
        (0..r).map(|i| (i * c..(i + 1) * c).step_by(1)).collect()
    } else {
        (0..c).map(|j| (j..r * c).step_by(c)).collect()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to `var`, if it was reached.
    pub fn get(&self, var: Var<'_, S>) -> Option<&[S]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Scalar> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a length-one node.
    pub fn item(&self) -> Result<S> {
        self.value().item()
    }

    fn unary(self, name: &'static str, value: Tensor<S>, op: Op<S>) -> Result<Self> {
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(name, value, op, rg)
    }

    fn binary(self, other: Self, name: &'static str, value: Tensor<S>, op: Op<S>) -> Result<Self> {
        let rg = self.tape.requires(&[self.id, other.id]);
        self.tape.push(name, value, op, rg)
    }

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1
    /// right operand a column vector; their extents are dropped from the result.
    pub fn matmul(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2();
        let (kb, p) = match b.shape() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => unreachable!(),
        };
        if k != kb {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let data = kernels::matmul(a.data(), b.data(), m, k, p);
        let shape = match (a.shape().len(), b.shape().len()) {
            (_, 1) => vec![m],
            (1, _) => vec![p],
            _ => vec![m, p],
        };
        let value = Tensor::from_vec(shape, data)?;
        self.binary(other, "matmul", value, Op::MatMul { a: self.id, b: other.id, m, k, p })
    }

    /// `self · otherᵀ` for matrices sharing their trailing extent.
    pub fn matmul_nt(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2();
        let (p, kb) = b.dims2();
        if k != kb {
            return Err(shape_err("matmul_nt", a.shape(), b.shape()));
        }
        let value = Tensor::matrix(m, p, kernels::matmul_nt(a.data(), b.data(), m, k, p))?;
        self.binary(other, "matmul_nt", value, Op::MatMulNt { a: self.id, b: other.id, m, k, p })
    }

    fn zip_with(self, other: Self, name: &'static str, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(name, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(a.shape().to_vec(), data)?;
        self.binary(other, name, value, op)
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.zip_with(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.zip_with(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Self) -> Result<Self> {
        self.zip_with(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(self, other: Self) -> Result<Self> {
        self.zip_with(other, "maximum", |x, y| if x >= y { x } else { y }, Op::Maximum(self.id, other.id))
    }

    /// Adds `row` to every row of `self`.
    pub fn add_row(self, row: Self) -> Result<Self> {
        let (a, b) = (self.value(), row.value());
        let c = a.cols();
        if b.numel() != c {
            return Err(shape_err("add_row", a.shape(), b.shape()));
        }
        let data = a
            .data()
            .chunks(c)
            .flat_map(|r| r.iter().zip(b.data()).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::from_vec(a.shape().to_vec(), data)?;
        self.binary(row, "add_row", value, Op::AddRow(self.id, row.id))
    }

    pub fn scale(self, c: S) -> Result<Self> {
        let a = self.value();
        let value = Tensor::from_vec(a.shape().to_vec(), a.data().iter().map(|&x| x * c).collect())?;
        self.unary("scale", value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: S) -> Result<Self> {
        let a = self.value();
        let value = Tensor::from_vec(a.shape().to_vec(), a.data().iter().map(|&x| x + c).collect())?;
        self.unary("add_scalar", value, Op::AddScalar(self.id))
    }

    /// `1 − self`, elementwise.
    pub fn one_minus(self) -> Result<Self> {
        self.scale(-S::one())?.add_scalar(S::one())
    }

    pub fn apply(self, act: Activation) -> Result<Self> {
        let a = self.value();
        let value = Tensor::from_vec(a.shape().to_vec(), a.data().iter().map(|&x| act.apply(x)).collect())?;
        self.unary("activation", value, Op::Act(self.id, act))
    }

    pub fn tanh(self) -> Result<Self> {
        self.apply(Activation::Tanh)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.apply(Activation::Sigmoid)
    }

    pub fn relu(self) -> Result<Self> {
        self.apply(Activation::Relu)
    }

    /// Max-subtracted softmax along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn softmax(self, axis: usize) -> Result<Self> {
        let a = self.value();
        if axis >= a.shape().len() {
            return Err(TensorError::Axis {
                axis,
                shape: a.shape().to_vec(),
            });
        }
        let mut data = a.data().to_vec();
        let (r, c) = a.dims2();
        if a.shape().len() == 1 || axis == 1 {
            data.chunks_mut(c).for_each(kernels::softmax_lane);
        } else {
            let mut t = kernels::transpose(&data, r, c);
            t.chunks_mut(r).for_each(kernels::softmax_lane);
            data = kernels::transpose(&t, c, r);
        }
        let value = Tensor::from_vec(a.shape().to_vec(), data)?;
        self.unary("softmax", value, Op::Softmax { input: self.id, axis })
    }

    pub fn transpose(self) -> Result<Self> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(TensorError::Contract(format!("transpose of rank-1 shape {:?}", a.shape())));
        }
        let (r, c) = a.dims2();
        let value = Tensor::matrix(c, r, kernels::transpose(a.data(), r, c))?;
        self.unary("transpose", value, Op::Transpose(self.id))
    }

    pub fn sum(self) -> Result<Self> {
        let s = self.value().data().iter().copied().sum();
        self.unary("sum", Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Self> {
        let a = self.value();
        let s: S = a.data().iter().copied().sum();
        self.unary("mean", Tensor::scalar(s / S::of(a.numel() as f64)), Op::Mean(self.id))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let a = self.value();
        let value = Tensor::from_vec(shape, a.data().to_vec())?;
        self.unary("reshape", value, Op::Reshape(self.id))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(self, start: usize, len: usize) -> Result<Self> {
        let a = self.value();
        let (r, c) = a.dims2();
        if a.shape().len() != 2 || len == 0 || start + len > r {
            return Err(TensorError::Contract(format!(
                "row slice {start}..{} out of range for {:?}",
                start + len,
                a.shape()
            )));
        }
        let value = Tensor::matrix(len, c, a.data()[start * c..(start + len) * c].to_vec())?;
        self.unary("slice_rows", value, Op::Narrow { input: self.id, offset: start * c })
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(self, i: usize) -> Result<Self> {
        let a = self.value();
        let (r, c) = a.dims2();
        if a.shape().len() != 2 || i >= r {
            return Err(TensorError::Contract(format!("row {i} out of range for {:?}", a.shape())));
        }
        let value = Tensor::vector(a.row(i).to_vec())?;
        self.unary("row", value, Op::Narrow { input: self.id, offset: i * c })
    }

    /// Element `i` of a vector as a scalar.
    pub fn at(self, i: usize) -> Result<Self> {
        let a = self.value();
        if a.shape().len() != 1 || i >= a.numel() {
            return Err(TensorError::Contract(format!("index {i} out of range for {:?}", a.shape())));
        }
        self.unary("at", Tensor::scalar(a.data()[i]), Op::Narrow { input: self.id, offset: i })
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Self> {
        let a = self.value();
        let (r, c) = a.dims2();
        if a.shape().len() != 2 || len == 0 || start + len > c {
            return Err(TensorError::Contract(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                a.shape()
            )));
        }
        let data = (0..r)
            .flat_map(|i| a.data()[i * c + start..i * c + start + len].iter().copied())
            .collect();
        let value = Tensor::matrix(r, len, data)?;
        self.unary("slice_cols", value, Op::SliceCols { input: self.id, start })
    }

    /// Cosine similarity of two equal-size tensors, flattened.
    pub fn cosine(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        if a.numel() != b.numel() {
            return Err(shape_err("cosine", a.shape(), b.shape()));
        }
        let na = kernels::norm(a.data());
        let nb = kernels::norm(b.data());
        let cos = kernels::cosine(a.data(), b.data()).ok_or(TensorError::Degenerate { op: "cosine" })?;
        self.binary(
            other,
            "cosine",
            Tensor::scalar(cos),
            Op::Cosine {
                a: self.id,
                b: other.id,
                cos,
                na,
                nb,
            },
        )
    }

    /// Mean binary cross-entropy of probabilities `self` against 0/1 `targets`,
    /// with probabilities clamped to `[eps, 1 − eps]`.
    pub fn bce(self, targets: &[S], eps: S) -> Result<Self> {
        let p = self.value();
        if p.numel() != targets.len() {
            return Err(shape_err("bce", p.shape(), &[targets.len()]));
        }
        let total: S = p
            .data()
            .iter()
            .zip(targets)
            .map(|(&pi, &y)| {
                let pc = pi.max(eps).min(S::one() - eps);
                y * pc.ln() + (S::one() - y) * (S::one() - pc).ln()
            })
            .sum();
        let loss = -total / S::of(targets.len() as f64);
        self.unary(
            "bce",
            Tensor::scalar(loss),
            Op::Bce {
                p: self.id,
                targets: targets.to_vec(),
                eps,
            },
        )
    }

    /// Smooth-L1 (Huber, transition at 1) distance of a scalar to `target`.
    pub fn smooth_l1(self, target: S) -> Result<Self> {
        let x = self.item()?;
        let d = (x - target).abs();
        let half = S::of(0.5);
        let loss = if d < S::one() { half * d * d } else { d - half };
        self.unary("smooth_l1", Tensor::scalar(loss), Op::SmoothL1 { input: self.id, target })
    }
}

/// Concatenates along `axis`: axis 0 joins vectors end to end or stacks
/// matrix rows; axis 1 joins matrix columns.
pub fn concat<'t, S: Scalar>(parts: &[Var<'t, S>], axis: usize) -> Result<Var<'t, S>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
    let tape = first.tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let rank = values[0].shape().len();
    if axis >= rank {
        return Err(TensorError::Axis {
            axis,
            shape: values[0].shape().to_vec(),
        });
    }
    for v in &values[1..] {
        let ok = v.shape().len() == rank && (rank == 1 || v.shape()[1 - axis] == values[0].shape()[1 - axis]);
        if !ok {
            return Err(shape_err("concat", values[0].shape(), v.shape()));
        }
    }
    let value = if rank == 1 {
        Tensor::vector(values.iter().flat_map(|v| v.data().iter().copied()).collect())?
    } else if axis == 0 {
        let rows = values.iter().map(|v| v.rows()).sum();
        Tensor::matrix(rows, values[0].cols(), values.iter().flat_map(|v| v.data().iter().copied()).collect())?
    } else {
        let rows = values[0].rows();
        let cols = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(i));
            }
        }
        Tensor::matrix(rows, cols, data)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.requires(&ids);
    tape.push("concat", value, Op::Concat { parts: ids, axis }, rg)
}

#[cfg(test)]
#[path = "tape_tests.rs"]
mod tests;
