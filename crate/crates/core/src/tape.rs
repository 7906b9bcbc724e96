//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Var::backward`] on a scalar walks the records once in reverse order and
//! adds `∂loss/∂leaf` into the gradient slot of every leaf that was created
//! with `requires_grad`. Leaf gradients accumulate across backward calls
//! until [`Tape::zero_grads`] is called.
//!
//! ```
//! use saqm::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap(), true);
//! let loss = x.mul(x).unwrap().sum();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::RefCell;
use std::fmt;

use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the logs.
pub const BCE_EPS: f64 = 1e-7;

type NodeId = usize;

enum Op<T> {
    Leaf,
    Conv3x3 { x: NodeId, w: NodeId, b: NodeId },
    Conv1x1 { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    MaxPool2x2 { x: NodeId, argmax: Vec<usize> },
    GlobalMaxPool { x: NodeId, argmax: Vec<usize> },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    Sigmoid(NodeId),
    Bce { p: NodeId, target: T },
    GradReverse { x: NodeId, lambda: T },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScaleBy { s: NodeId, x: NodeId },
    Scale { x: NodeId, c: T },
    Sum(NodeId),
    Reshape(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward pass. Single-threaded by construction
/// (interior mutability through `RefCell`); independent tapes may live on
/// different threads.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<Vec<Option<Tensor<T>>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.nodes.borrow().len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), leaf_grads: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grads(&self) {
        self.leaf_grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.borrow_mut().push(None);
        Var { tape: self, id }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn check_same(&self, a: NodeId, b: NodeId) -> Result<()> {
        if a == b {
            return Ok(());
        }
        let nodes = self.nodes.borrow();
        let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
        if sa != sb {
            return Err(Error::contract(format!("elementwise operands differ in shape: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&self, x: NodeId, f: impl Fn(&Tensor<T>) -> Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let value = f(&self.nodes.borrow()[x].value);
        let rg = self.needs(&[x]);
        self.push(value, op, rg)
    }

    fn conv(&self, x: NodeId, w: NodeId, b: NodeId, k: usize) -> Result<Var<'_, T>> {
        let value = {
            let nodes = self.nodes.borrow();
            let (xv, wv, bv) = (&nodes[x].value, &nodes[w].value, &nodes[b].value);
            let [ci, h, wd] = xv.dims3()?;
            let [co, wci, kh, kw] = match wv.shape()[..] {
                [a, b, c, d] => [a, b, c, d],
                _ => return Err(Error::contract(format!("conv weight must be rank 4, got {:?}", wv.shape()))),
            };
            if kh != k || kw != k {
                return Err(Error::contract(format!("kernel must be {k}x{k}, got {kh}x{kw}")));
            }
            if wci != ci {
                return Err(Error::contract(format!(
                    "input channel dimension mismatch: input has {ci}, weight expects {wci}"
                )));
            }
            if bv.numel() != co {
                return Err(Error::contract(format!(
                    "bias length {} does not match output channel dimension {co}",
                    bv.numel()
                )));
            }
            let hw = h * wd;
            let mut out = vec![T::zero(); co * hw];
            for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
                chunk.fill(bv.data()[o]);
            }
            if k == 3 {
                let mut cols = vec![T::zero(); ci * 9 * hw];
                kernels::im2col3x3(xv.data(), ci, h, wd, &mut cols);
                kernels::gemm_nn(wv.data(), &cols, &mut out, co, ci * 9, hw);
            } else {
                kernels::gemm_nn(wv.data(), xv.data(), &mut out, co, ci, hw);
            }
            Tensor::new(&[co, h, wd], out)?
        };
        let op = if k == 3 { Op::Conv3x3 { x, w, b } } else { Op::Conv1x1 { x, w, b } };
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(value, op, rg))
    }

    /// Reverse sweep from `loss`; see [`Var::backward`].
    fn backward_from(&self, loss: NodeId) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss + 1);
        grads.resize_with(loss + 1, || None);
        grads[loss] = Some(vec![T::one()]);

        let mut leaf_grads = self.leaf_grads.borrow_mut();
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let val = |i: NodeId| &nodes[i].value;
            let rg = |i: NodeId| nodes[i].requires_grad;
            let mut acc = |i: NodeId, contrib: Vec<T>| {
                if !nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(contrib) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    let g = Tensor::new(node.value.shape(), g)?;
                    match &mut leaf_grads[id] {
                        Some(existing) => existing.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                &Op::Conv3x3 { x, w, b } | &Op::Conv1x1 { x, w, b } => {
                    let k3 = matches!(node.op, Op::Conv3x3 { .. });
                    let [ci, h, wd] = val(x).dims3()?;
                    let co = val(w).shape()[0];
                    let hw = h * wd;
                    let kdim = if k3 { ci * 9 } else { ci };
                    if rg(b) {
                        acc(b, g.chunks_exact(hw).map(|r| r.iter().copied().sum()).collect());
                    }
                    if rg(w) || rg(x) {
                        let cols_owned;
                        let cols: &[T] = if k3 {
                            let mut c = vec![T::zero(); kdim * hw];
                            kernels::im2col3x3(val(x).data(), ci, h, wd, &mut c);
                            cols_owned = c;
                            &cols_owned
                        } else {
                            val(x).data()
                        };
                        if rg(w) {
                            let mut gw = vec![T::zero(); co * kdim];
                            kernels::gemm_nt(&g, cols, &mut gw, co, hw, kdim);
                            acc(w, gw);
                        }
                        if rg(x) {
                            let mut gcols = vec![T::zero(); kdim * hw];
                            kernels::gemm_tn(val(w).data(), &g, &mut gcols, kdim, co, hw);
                            if k3 {
                                let mut gx = vec![T::zero(); ci * hw];
                                kernels::col2im3x3(&gcols, ci, h, wd, &mut gx);
                                acc(x, gx);
                            } else {
                                acc(x, gcols);
                            }
                        }
                    }
                }
                &Op::Relu(x) => {
                    let xv = val(x).data();
                    acc(x, g.iter().zip(xv).map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() }).collect());
                }
                Op::MaxPool2x2 { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                    let mut gx = vec![T::zero(); val(*x).numel()];
                    for (&gi, &a) in g.iter().zip(argmax) {
                        gx[a] += gi;
                    }
                    acc(*x, gx);
                }
                &Op::MatMul(a, b) => {
                    let [m, k] = val(a).dims2()?;
                    let n = val(b).shape()[1];
                    if rg(a) {
                        let mut ga = vec![T::zero(); m * k];
                        kernels::gemm_nt(&g, val(b).data(), &mut ga, m, n, k);
                        acc(a, ga);
                    }
                    if rg(b) {
                        let mut gb = vec![T::zero(); k * n];
                        kernels::gemm_tn(val(a).data(), &g, &mut gb, k, m, n);
                        acc(b, gb);
                    }
                }
                &Op::Transpose(x) => {
                    let [r, c] = val(x).dims2()?;
                    acc(x, kernels::transpose(&g, c, r));
                }
                &Op::SoftmaxRows(x) => {
                    let [rows, cols] = val(x).dims2()?;
                    let y = node.value.data();
                    let mut gx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let inner = kernels::dot(yr, gr);
                        for c in 0..cols {
                            gx[r * cols + c] = yr[c] * (gr[c] - inner);
                        }
                    }
                    acc(x, gx);
                }
                &Op::Sigmoid(x) => {
                    let y = node.value.data();
                    acc(x, g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (T::one() - yi)).collect());
                }
                &Op::Bce { p, target } => {
                    let pc = clamp_prob(val(p).item());
                    acc(p, vec![g[0] * (pc - target) / (pc * (T::one() - pc))]);
                }
                &Op::GradReverse { x, lambda } => {
                    acc(x, g.iter().map(|&gi| -(lambda * gi)).collect());
                }
                &Op::Add(a, b) => {
                    if rg(a) {
                        acc(a, g.clone());
                    }
                    acc(b, g);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (val(a).data(), val(b).data());
                    if rg(a) {
                        acc(a, g.iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect());
                    }
                    if rg(b) {
                        acc(b, g.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect());
                    }
                }
                &Op::ScaleBy { s, x } => {
                    let sv = val(s).item();
                    if rg(s) {
                        acc(s, vec![kernels::dot(&g, val(x).data())]);
                    }
                    acc(x, g.iter().map(|&gi| gi * sv).collect());
                }
                &Op::Scale { x, c } => acc(x, g.iter().map(|&gi| gi * c).collect()),
                &Op::Sum(x) => acc(x, vec![g[0]; val(x).numel()]),
                &Op::Reshape(x) => acc(x, g),
            }
        }
        Ok(())
    }
}

fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::lit(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// First element; the natural accessor for scalars.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.leaf_grads.borrow()[self.id].clone()
    }

    /// Propagates `∂self/∂leaf` into every `requires_grad` leaf.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    /// 3×3 convolution, stride 1, zero padding 1.
    pub fn conv3x3(&self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Self> {
        self.tape.conv(self.id, weight.id, bias.id, 3)
    }

    /// Pointwise (1×1) convolution.
    pub fn conv1x1(&self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Self> {
        self.tape.conv(self.id, weight.id, bias.id, 1)
    }

    pub fn relu(&self) -> Self {
        self.tape.unary(self.id, |t| t.map(|v| v.max(T::zero())), Op::Relu(self.id))
    }

    pub fn maxpool2x2(&self) -> Result<Self> {
        let (value, argmax) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let [c, h, w] = x.dims3()?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::contract(format!("maxpool2x2 needs even spatial dims, got {h}x{w}")));
            }
            let (out, arg) = kernels::maxpool2x2(x.data(), c, h, w);
            (Tensor::new(&[c, h / 2, w / 2], out)?, arg)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::MaxPool2x2 { x: self.id, argmax }, rg))
    }

    /// Per-channel maximum over every remaining axis; `C×…` → `C`.
    pub fn global_max_pool(&self) -> Result<Self> {
        let (value, argmax) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.rank() < 2 {
                return Err(Error::contract(format!("global_max_pool needs rank >= 2, got {:?}", x.shape())));
            }
            let c = x.shape()[0];
            let (out, arg) = kernels::row_max(x.data(), c, x.numel() / c);
            (Tensor::new(&[c], out)?, arg)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::GlobalMaxPool { x: self.id, argmax }, rg))
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let [m, k] = nodes[self.id].value.dims2()?;
            let [k2, n] = nodes[other.id].value.dims2()?;
            if k != k2 {
                return Err(Error::contract(format!(
                    "matmul inner dimension mismatch: left has {k} columns, right has {k2} rows"
                )));
            }
            let mut out = vec![T::zero(); m * n];
            kernels::gemm_nn(nodes[self.id].value.data(), nodes[other.id].value.data(), &mut out, m, k, n);
            Tensor::new(&[m, n], out)?
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(&self) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let [r, c] = x.dims2()?;
            Tensor::new(&[c, r], kernels::transpose(x.data(), r, c))?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    /// Softmax over the second index of a rank-2 tensor (each row sums to 1).
    pub fn softmax_rows(&self) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let [r, c] = x.dims2()?;
            Tensor::new(&[r, c], kernels::softmax_rows(x.data(), r, c))?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::SoftmaxRows(self.id), rg))
    }

    pub fn sigmoid(&self) -> Self {
        self.tape.unary(self.id, |t| t.map(sigmoid), Op::Sigmoid(self.id))
    }

    /// Binary cross-entropy of a scalar probability against `target ∈ [0,1]`.
    pub fn bce(&self, target: T) -> Result<Self> {
        if !(target >= T::zero() && target <= T::one()) {
            return Err(Error::contract(format!("bce target {target} outside [0,1]")));
        }
        if self.tape.nodes.borrow()[self.id].value.numel() != 1 {
            return Err(Error::contract("bce expects a scalar probability"));
        }
        let p = clamp_prob(self.item());
        let loss = -(target * p.ln() + (T::one() - target) * (T::one() - p).ln());
        let rg = self.requires_grad();
        Ok(self.tape.push(Tensor::scalar(loss), Op::Bce { p: self.id, target }, rg))
    }

    /// Identity forward; multiplies the upstream gradient by `-lambda` on the
    /// way back.
    pub fn grad_reverse(&self, lambda: T) -> Self {
        self.tape.unary(self.id, Tensor::clone, Op::GradReverse { x: self.id, lambda })
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Self> {
        self.tape.check_same(self.id, other.id)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let mut v = nodes[self.id].value.clone();
            v.add_assign(&nodes[other.id].value);
            v
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Add(self.id, other.id), rg))
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Self> {
        self.tape.check_same(self.id, other.id)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect())?
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Mul(self.id, other.id), rg))
    }

    /// Multiplies every element by the single element of `scalar`.
    pub fn scale_by(&self, scalar: Var<'t, T>) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let s = &nodes[scalar.id].value;
            if s.numel() != 1 {
                return Err(Error::contract(format!("scale_by expects a scalar, got shape {:?}", s.shape())));
            }
            let s = s.item();
            nodes[self.id].value.map(|v| v * s)
        };
        let rg = self.tape.needs(&[self.id, scalar.id]);
        Ok(self.tape.push(value, Op::ScaleBy { s: scalar.id, x: self.id }, rg))
    }

    pub fn scale(&self, c: T) -> Self {
        self.tape.unary(self.id, |t| t.map(|v| v * c), Op::Scale { x: self.id, c })
    }

    pub fn sum(&self) -> Self {
        self.tape.unary(self.id, |t| Tensor::scalar(t.data().iter().copied().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Self {
        let n = T::lit(self.tape.nodes.borrow()[self.id].value.numel() as f64);
        self.sum().scale(n.recip())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let value = self.value().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }
}

/// Logistic function kept strictly inside (0,1) even where it would round
/// to an endpoint.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let y = if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    y.max(T::min_positive_value()).min(T::one() - T::epsilon() / T::lit(2.0))
}
