//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in insertion
//! order, which is also a topological order. [`Tape::backward`] walks the
//! nodes once in reverse, summing gradients at fan-out. A tape is single-use:
//! a second `backward` is rejected.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::nn::norm::{layer_norm_backward, layer_norm_forward, NormMode, NormStats};
use crate::nn::{activation, resample};
use crate::tensor::{Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Deliberate corruption of one backward rule, used to prove that the
/// gradient checker notices broken derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    LayerNorm,
    Conv2d,
    Silu,
}

impl std::str::FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer-norm" => Ok(Fault::LayerNorm),
            "conv2d" => Ok(Fault::Conv2d),
            "silu" => Ok(Fault::Silu),
            other => Err(Error::Config(format!("unknown fault {other:?}"))),
        }
    }
}

impl std::fmt::Display for Fault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fault::LayerNorm => "layer-norm",
            Fault::Conv2d => "conv2d",
            Fault::Silu => "silu",
        })
    }
}

const FAULT_FACTOR: f64 = 1.01;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Reshape(usize),
    Pad2d(usize, usize),
    Sum(usize),
    MeanSquaredError(usize, usize),
    Silu(usize),
    Conv2d { x: usize, w: usize, b: usize, spec: ConvSpec },
    LayerNorm { x: usize, gamma: usize, beta: usize, mode: NormMode, stats: NormStats<T> },
    AvgPool2x(usize),
    Upsample2x(usize),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MeanSquaredError(a, b) => vec![a, b],
            Op::Scale(a, _) | Op::Reshape(a) | Op::Pad2d(a, _) | Op::Sum(a) | Op::Silu(a) | Op::AvgPool2x(a) | Op::Upsample2x(a) => {
                vec![a]
            }
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Reshape(..) => "reshape",
            Op::Pad2d(..) => "pad2d",
            Op::Sum(..) => "sum",
            Op::MeanSquaredError(..) => "mse",
            Op::Silu(..) => "silu",
            Op::Conv2d { .. } => "conv2d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::AvgPool2x(..) => "avg_pool2x",
            Op::Upsample2x(..) => "upsample2x",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("id", &self.id).field("nodes", &self.len()).finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            fault: None,
        }
    }

    /// A tape whose backward rule for `fault` is deliberately wrong.
    pub fn with_fault(fault: Option<Fault>) -> Self {
        Tape { fault, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input (parameter or probed input).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        if cfg!(debug_assertions) && !value.is_finite() {
            let inputs_finite = op.inputs().iter().all(|&i| nodes[i].value.is_finite());
            assert!(!inputs_finite || matches!(op, Op::Leaf), "{} produced non-finite output from finite inputs", op.name());
        }
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn record(&self, op: Op<T>, value: Tensor<T>) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn owns(&self, var: &Var<'_, T>) -> bool {
        std::ptr::eq(self, var.tape)
    }

    fn check_same(&self, vars: &[&Var<'_, T>]) -> Result<()> {
        if vars.iter().all(|v| self.owns(v)) {
            Ok(())
        } else {
            Err(Error::ForeignVar)
        }
    }

    /// Gradient of the scalar `loss` with respect to every node that requires
    /// a gradient. Consumes the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !self.owns(&loss) {
            return Err(Error::ForeignVar);
        }
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape();
        if loss_shape != [1] {
            self.consumed.set(false);
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].as_ref() else { continue };
            for (input, grad) in self.node_backward(&nodes, node, g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&grad)?,
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { tape_id: self.id, grads })
    }

    fn perturb(&self, fault: Fault, t: Tensor<T>) -> Tensor<T> {
        if self.fault == Some(fault) {
            t.scale(T::from_f64(FAULT_FACTOR))
        } else {
            t
        }
    }

    fn node_backward(&self, nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let val = |i: usize| &nodes[i].value;
        Ok(match node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.scale(-T::one()))],
            Op::Mul(a, b) => vec![(a, g.mul(val(b))?), (b, g.mul(val(a))?)],
            Op::Scale(a, s) => vec![(a, g.scale(s))],
            Op::Reshape(a) => vec![(a, g.reshape(val(a).shape())?)],
            Op::Pad2d(a, pad) => vec![(a, g.crop2d(pad)?)],
            Op::Sum(a) => vec![(a, Tensor::full(val(a).shape(), g.data()[0])?)],
            Op::MeanSquaredError(p, t) => {
                let n = T::from_f64(val(p).len() as f64);
                let k = (T::one() + T::one()) * g.data()[0] / n;
                let dp = val(p).sub(val(t))?.scale(k);
                let dt = dp.scale(-T::one());
                vec![(p, dp), (t, dt)]
            }
            Op::Silu(a) => {
                let dx = activation::silu_backward(val(a), g)?;
                vec![(a, self.perturb(Fault::Silu, dx))]
            }
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) = conv2d_backward(val(x), val(w), g, spec)?;
                vec![(x, self.perturb(Fault::Conv2d, dx)), (w, dw), (b, db)]
            }
            Op::LayerNorm { x, gamma, beta, mode, ref stats } => {
                let (dx, dgamma, dbeta) = layer_norm_backward(val(x), val(gamma), stats, g, mode)?;
                vec![(x, self.perturb(Fault::LayerNorm, dx)), (gamma, dgamma), (beta, dbeta)]
            }
            Op::AvgPool2x(a) => vec![(a, resample::avg_pool2x_backward(val(a).shape(), g)?)],
            Op::Upsample2x(a) => vec![(a, resample::upsample2x_backward(val(a).shape(), g)?)],
        })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(tape {}, node {}, shape {:?})", self.tape.id, self.id, self.shape())
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Borrow of the recorded value. Drop it before recording new ops.
    pub fn value_ref(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor<T> {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    fn unary(self, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Self> {
        let out = f(&self.value_ref())?;
        Ok(self.tape.record(op, out))
    }

    fn binary(self, other: Var<'t, T>, op: Op<T>, f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>) -> Result<Self> {
        self.tape.check_same(&[&other])?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.record(op, out))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.mul(b))
    }

    pub fn scale(self, s: T) -> Result<Self> {
        self.unary(Op::Scale(self.id, s), |a| Ok(a.scale(s)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.unary(Op::Reshape(self.id), |a| a.reshape(shape))
    }

    pub fn pad2d(self, pad: usize) -> Result<Self> {
        self.unary(Op::Pad2d(self.id, pad), |a| a.pad2d(pad))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Result<Self> {
        self.unary(Op::Sum(self.id), |a| Ok(Tensor::scalar(a.sum())))
    }

    /// Mean over all elements of `(self − target)²`, shape `[1]`.
    pub fn mse(self, target: Var<'t, T>) -> Result<Self> {
        self.binary(target, Op::MeanSquaredError(self.id, target.id), |p, t| {
            let d = p.sub(t)?;
            let n = T::from_f64(d.len() as f64);
            Ok(Tensor::scalar(d.data().iter().map(|&v| v * v).sum::<T>() / n))
        })
    }

    pub fn silu(self) -> Result<Self> {
        self.unary(Op::Silu(self.id), |a| Ok(activation::silu_forward(a)))
    }

    pub fn conv2d(self, weight: Var<'t, T>, bias: Var<'t, T>, spec: ConvSpec) -> Result<Self> {
        self.tape.check_same(&[&weight, &bias])?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            conv2d_forward(&nodes[self.id].value, &nodes[weight.id].value, &nodes[bias.id].value, spec)?
        };
        Ok(self.tape.record(Op::Conv2d { x: self.id, w: weight.id, b: bias.id, spec }, out))
    }

    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64, mode: NormMode) -> Result<Self> {
        self.tape.check_same(&[&gamma, &beta])?;
        let (out, stats) = {
            let nodes = self.tape.nodes.borrow();
            layer_norm_forward(&nodes[self.id].value, &nodes[gamma.id].value, &nodes[beta.id].value, T::from_f64(eps), mode)?
        };
        Ok(self.tape.record(Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, mode, stats }, out))
    }

    pub fn avg_pool2x(self) -> Result<Self> {
        self.unary(Op::AvgPool2x(self.id), resample::avg_pool2x)
    }

    pub fn upsample2x(self) -> Result<Self> {
        self.unary(Op::Upsample2x(self.id), resample::upsample2x)
    }
}

/// Result of [`Tape::backward`]: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients<T = f32> {
    tape_id: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`; zeros when `var` does not reach the loss.
    pub fn wrt(&self, var: Var<'_, T>) -> Result<Tensor<T>> {
        if var.tape.id != self.tape_id {
            return Err(Error::ForeignVar);
        }
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => Ok(g.clone()),
            None => Ok(var.value_ref().zeros_like()),
        }
    }

    /// Moves the gradient out, avoiding a copy.
    pub fn take(&mut self, var: Var<'_, T>) -> Result<Tensor<T>> {
        if var.tape.id != self.tape_id {
            return Err(Error::ForeignVar);
        }
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => Ok(g),
            None => Ok(var.value_ref().zeros_like()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let loss = x.mul(x).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_add_has_unit_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[3], &[1., 2., 3.]));
        let b = tape.leaf(t(&[3], &[-1., 0., 5.]));
        let g = tape.backward(a.add(b).unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[1.; 3]);
        assert_eq!(g.wrt(b).unwrap().data(), &[1.; 3]);
    }

    #[test]
    fn silu_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1], &[0.0]));
        let g = tape.backward(x.silu().unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.5]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x·x + 3x) → 2x + 3
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., -2.]));
        let y = x.mul(x).unwrap().add(x.scale(3.0).unwrap()).unwrap();
        let g = tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[5., -1.]);
    }

    #[test]
    fn independent_subgraphs() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1., 2.]));
        let b = tape.leaf(t(&[2], &[3., 4.]));
        let la = a.mul(a).unwrap().sum().unwrap();
        let lb = b.scale(2.0).unwrap().sum().unwrap();
        let g = tape.backward(la.add(lb).unwrap()).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[2., 4.]);
        assert_eq!(g.wrt(b).unwrap().data(), &[2., 2.]);
    }

    #[test]
    fn constants_and_unreached_leaves() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        let c = tape.constant(t(&[2], &[5., 5.]));
        let unused = tape.leaf(t(&[3], &[0., 0., 0.]));
        assert!(x.mul(c).unwrap().requires_grad());
        assert!(!c.requires_grad());
        let g = tape.backward(x.mul(c).unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[5., 5.]);
        assert_eq!(g.wrt(unused).unwrap().data(), &[0.; 3]);
    }

    #[test]
    fn mse_gradient() {
        let tape = Tape::new();
        let p = tape.leaf(t(&[2], &[1., 3.]));
        let y = tape.constant(t(&[2], &[0., 0.]));
        let loss = p.mse(y).unwrap();
        assert_eq!(loss.value().data(), &[5.0]);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(p).unwrap().data(), &[1., 3.]);
    }

    #[test]
    fn errors() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let loss = x.sum().unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));

        let other = Tape::new();
        let y = other.leaf(t(&[1], &[1.0]));
        assert!(matches!(tape.backward(y), Err(Error::ForeignVar)));
        assert!(matches!(x.add(y), Err(Error::ForeignVar)));
        let g = other.backward(y).unwrap();
        assert!(matches!(g.wrt(x), Err(Error::ForeignVar)));
    }
}
