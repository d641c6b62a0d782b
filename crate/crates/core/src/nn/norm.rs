//! Layer normalization over 4-D feature maps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Which axes a normalization group spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// One group per `(b, i, j)` over the `C` channel values.
    #[default]
    Channel,
    /// One group per `(b, c)` over the `H·W` spatial values.
    Spatial,
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Channel => "channel",
            NormMode::Spatial => "spatial",
        })
    }
}

impl FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(NormMode::Channel),
            "spatial" => Ok(NormMode::Spatial),
            other => Err(Error::Config(format!("unknown norm mode {other:?} (expected channel|spatial)"))),
        }
    }
}

/// Per-group statistics saved by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Visits every element as `(group, channel, flat index)`.
fn for_each_index(b: usize, c: usize, hw: usize, mode: NormMode, mut f: impl FnMut(usize, usize, usize)) {
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            for p in 0..hw {
                let group = match mode {
                    NormMode::Channel => bi * hw + p,
                    NormMode::Spatial => bi * c + ci,
                };
                f(group, ci, base + p);
            }
        }
    }
}

fn group_geometry(x: &[usize], mode: NormMode) -> Result<(usize, usize, usize, usize, usize)> {
    let [b, c, h, w] = *x else {
        return Err(Error::geometry("layer_norm", format!("input must be [B,C,H,W], got {x:?}")));
    };
    let hw = h * w;
    let (groups, size) = match mode {
        NormMode::Channel => (b * hw, c),
        NormMode::Spatial => (b * c, hw),
    };
    Ok((b, c, hw, groups, size))
}

pub fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    mode: NormMode,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let (b, c, hw, groups, size) = group_geometry(x.shape(), mode)?;
    for (name, p) in [("gamma", gamma), ("beta", beta)] {
        if p.shape() != [c] {
            return Err(Error::geometry("layer_norm", format!("{name} has shape {:?}, expected [{c}]", p.shape())));
        }
    }
    let n = T::from_f64(size as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); groups];
    for_each_index(b, c, hw, mode, |g, _, i| mean[g] += xd[i]);
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); groups];
    for_each_index(b, c, hw, mode, |g, _, i| {
        let d = xd[i] - mean[g];
        var[g] += d * d;
    });
    let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v / n + eps).sqrt()).collect();
    let mut y = x.zeros_like();
    let (gd, bd) = (gamma.data(), beta.data());
    let yd = y.data_mut();
    for_each_index(b, c, hw, mode, |g, ci, i| {
        yd[i] = gd[ci] * (xd[i] - mean[g]) * rstd[g] + bd[ci];
    });
    Ok((y, NormStats { mean, rstd }))
}

/// Closed-form backward: with `x̂ = (x−μ)·rstd` and `ĝ = dy·γ`,
/// `dx = rstd·(ĝ − mean(ĝ) − x̂·mean(ĝ·x̂))`, means taken over each group.
pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats<T>,
    dy: &Tensor<T>,
    mode: NormMode,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, hw, groups, size) = group_geometry(x.shape(), mode)?;
    if dy.shape() != x.shape() {
        return Err(Error::ShapeMismatch { op: "layer_norm backward", left: dy.shape().to_vec(), right: x.shape().to_vec() });
    }
    let n = T::from_f64(size as f64);
    let (xd, gd, dyd) = (x.data(), gamma.data(), dy.data());
    let (mean, rstd) = (&stats.mean, &stats.rstd);
    let xhat = |g: usize, i: usize| (xd[i] - mean[g]) * rstd[g];

    let mut mean_g = vec![T::zero(); groups];
    let mut mean_gx = vec![T::zero(); groups];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for_each_index(b, c, hw, mode, |g, ci, i| {
        let xh = xhat(g, i);
        let gh = dyd[i] * gd[ci];
        mean_g[g] += gh;
        mean_gx[g] += gh * xh;
        dgamma[ci] += dyd[i] * xh;
        dbeta[ci] += dyd[i];
    });
    mean_g.iter_mut().chain(mean_gx.iter_mut()).for_each(|m| *m = *m / n);

    let mut dx = x.zeros_like();
    let dxd = dx.data_mut();
    for_each_index(b, c, hw, mode, |g, ci, i| {
        let gh = dyd[i] * gd[ci];
        dxd[i] = rstd[g] * (gh - mean_g[g] - xhat(g, i) * mean_gx[g]);
    });
    Ok((dx, Tensor::from_vec(&[c], dgamma)?, Tensor::from_vec(&[c], dbeta)?))
}

/// Affine layer-norm parameters. `P` is a stored [`Tensor`] or a recorded
/// [`Var`](crate::autograd::Var).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<P> {
    pub gamma: P,
    pub beta: P,
    pub eps: f64,
    pub mode: NormMode,
}

pub type LayerNormParams<T = f32> = LayerNorm<Tensor<T>>;

impl<P> LayerNorm<P> {
    pub fn map<Q, E>(&self, f: &mut impl FnMut(&P) -> Result<Q, E>) -> Result<LayerNorm<Q>, E> {
        Ok(LayerNorm { gamma: f(&self.gamma)?, beta: f(&self.beta)?, eps: self.eps, mode: self.mode })
    }
}

impl<T: Scalar> LayerNorm<Tensor<T>> {
    /// `gamma = 1`, `beta = 0`.
    pub fn new(channels: usize, eps: f64, mode: NormMode) -> Result<Self> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Config(format!("layer-norm epsilon must be > 0, got {eps}")));
        }
        Ok(LayerNorm { gamma: Tensor::ones(&[channels])?, beta: Tensor::zeros(&[channels])?, eps, mode })
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(layer_norm_forward(x, &self.gamma, &self.beta, T::from_f64(self.eps), self.mode)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    #[test]
    fn three_channel_hand_values() {
        let x = Tensor::<f64>::from_vec(&[1, 3, 1, 1], vec![1., 2., 3.]).unwrap();
        let (y, _) = layer_norm_forward(&x, &Tensor::ones(&[3]).unwrap(), &Tensor::zeros(&[3]).unwrap(), 0.0, NormMode::Channel)
            .unwrap();
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_channels_normalize_to_zero() {
        let x = Tensor::<f32>::full(&[2, 4, 3, 3], 0.7).unwrap();
        let p = LayerNormParams::<f32>::new(4, DEFAULT_EPS, NormMode::Channel).unwrap();
        assert!(p.apply(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_returns_beta() {
        let mut rng = Prng::new(2);
        let x = Tensor::<f32>::uniform(&[1, 3, 2, 2], -1., 1., &mut rng).unwrap();
        let mut p = LayerNormParams::<f32>::new(3, DEFAULT_EPS, NormMode::Channel).unwrap();
        p.gamma = Tensor::zeros(&[3]).unwrap();
        p.beta = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = p.apply(&x).unwrap();
        for c in 0..3 {
            for q in 0..4 {
                assert_eq!(y.data()[c * 4 + q], p.beta.data()[c]);
            }
        }
    }

    #[test]
    fn groups_have_zero_mean_unit_variance() {
        let mut rng = Prng::new(8);
        let x = Tensor::<f32>::uniform(&[2, 16, 5, 5], -3., 3., &mut rng).unwrap();
        for mode in [NormMode::Channel, NormMode::Spatial] {
            let p = LayerNormParams::<f32>::new(16, DEFAULT_EPS, mode).unwrap();
            let y = p.apply(&x).unwrap();
            let (_, _, hw, groups, size) = group_geometry(y.shape(), mode).unwrap();
            let mut sum = vec![0.0f64; groups];
            let mut sq = vec![0.0f64; groups];
            for_each_index(2, 16, hw, mode, |g, _, i| {
                sum[g] += y.data()[i] as f64;
                sq[g] += (y.data()[i] as f64).powi(2);
            });
            for g in 0..groups {
                let m = sum[g] / size as f64;
                let v = sq[g] / size as f64 - m * m;
                assert!(m.abs() < 1e-5, "{mode} mean {m}");
                // ε shrinks the variance by var/(var+ε)
                assert!((v - 1.0).abs() < 1e-4, "{mode} var {v}");
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LayerNormParams::<f32>::new(4, 0.0, NormMode::Channel).is_err());
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]).unwrap();
        let p = LayerNormParams::<f32>::new(4, DEFAULT_EPS, NormMode::Channel).unwrap();
        assert!(p.apply(&x).is_err());
        assert_eq!(LayerNormParams::<f32>::new(64, DEFAULT_EPS, NormMode::Channel).unwrap().param_count(), 128);
    }
}
