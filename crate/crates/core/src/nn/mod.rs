//! Differentiable building blocks: convolutions, layer normalization, SiLU.
//!
//! Parameter structs are generic over their storage `P`: `Tensor<T>` for a
//! model at rest, [`Var`] once bound to a tape for a forward pass.

pub mod activation;
pub mod conv;
pub mod norm;
pub mod resample;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use conv::{Conv2d, Conv2dParams, ConvSpec};
pub use norm::{LayerNorm, LayerNormParams, NormMode};

/// Anything that owns named parameters in a fixed order.
pub trait Parameters<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P));
}

impl<P> Parameters<P> for Conv2d<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<P> Parameters<P> for LayerNorm<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

impl<T> Parameters<Tensor<T>> for Tensor<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(prefix.to_string(), self)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        f(self)
    }
}

impl<P, M: Parameters<P>> Parameters<P> for [M] {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&format!("{prefix}.{i}"), f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        for m in self.iter_mut() {
            m.visit_mut(f);
        }
    }
}

impl<P, M: Parameters<P>> Parameters<P> for Vec<M> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.as_slice().visit(prefix, f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        self.as_mut_slice().visit_mut(f)
    }
}

/// Total scalar parameter count, biases and norm affine terms included.
pub fn param_count<T: Scalar, M: Parameters<Tensor<T>> + ?Sized>(params: &M) -> usize {
    let mut n = 0;
    params.visit("", &mut |_, t| n += t.len());
    n
}

/// Named parameters in visit order.
pub fn named_params<'a, P, M: Parameters<P> + ?Sized>(params: &'a M, prefix: &str) -> Vec<(String, &'a P)> {
    let mut out = Vec::new();
    params.visit(prefix, &mut |name, p| out.push((name, p)));
    out
}

pub fn conv2d<'t, T: Scalar>(x: Var<'t, T>, p: &Conv2d<Var<'t, T>>) -> Result<Var<'t, T>> {
    x.conv2d(p.weight, p.bias, p.spec)
}

/// Per-channel spatial convolution; no cross-channel mixing.
pub fn depthwise_conv2d<'t, T: Scalar>(x: Var<'t, T>, p: &Conv2d<Var<'t, T>>) -> Result<Var<'t, T>> {
    let channels = x.shape().get(1).copied().unwrap_or(0);
    let w = p.weight.shape();
    if p.spec.groups != channels || w[0] != channels || w[1] != 1 {
        return Err(Error::geometry(
            "depthwise_conv2d",
            format!("groups {} must equal input and output channels {channels} (weight {w:?})", p.spec.groups),
        ));
    }
    if p.spec != ConvSpec::same(w[2], channels) {
        return Err(Error::geometry("depthwise_conv2d", format!("expected same-size padding {}, got {:?}", (w[2] - 1) / 2, p.spec)));
    }
    x.conv2d(p.weight, p.bias, p.spec)
}

/// Per-pixel linear map across channels (1×1 convolution).
pub fn pointwise_conv2d<'t, T: Scalar>(x: Var<'t, T>, p: &Conv2d<Var<'t, T>>) -> Result<Var<'t, T>> {
    let w = p.weight.shape();
    if w.len() != 4 || w[2] != 1 || w[3] != 1 || p.spec.padding != 0 || p.spec.stride != 1 {
        return Err(Error::geometry(
            "pointwise_conv2d",
            format!("requires a 1×1 kernel, stride 1, no padding; got weight {w:?}, {:?}", p.spec),
        ));
    }
    x.conv2d(p.weight, p.bias, p.spec)
}

pub fn layer_norm<'t, T: Scalar>(x: Var<'t, T>, p: &LayerNorm<Var<'t, T>>) -> Result<Var<'t, T>> {
    x.layer_norm(p.gamma, p.beta, p.eps, p.mode)
}

pub fn silu<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    x.silu()
}
