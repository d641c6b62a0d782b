//! Finite-difference verification of backward rules (double precision).
//!
//! For each probed coordinate the analytic gradient is compared with the
//! central difference `(f(x+ε·eᵢ) − f(x−ε·eᵢ)) / 2ε`; the error is
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.

use crate::autograd::{Fault, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{self, build_model, ModelConfig, ModuleKind};
use crate::nn::{self, Conv2d, ConvSpec, LayerNorm, NormMode};
use crate::rng::{substream, Prng};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst error.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Checks `f` against central differences with respect to every input.
/// `f` must return a scalar `[1]` Var.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64, fault: Option<Fault>) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("grad_check eps must be > 0, got {eps}")));
    }
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::with_fault(fault);
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v)).collect::<Result<_>>()?
    };

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().data()[0])
    };

    let mut probe = inputs.to_vec();
    let mut best = GradCheck { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { what: format!("in f at input {i}, coordinate {j}") });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad.data()[j], numeric);
            best.coordinates += 1;
            if err > best.max_rel_error {
                best.max_rel_error = err;
                best.worst = (i, j);
            }
        }
    }
    Ok(best)
}

/// Single-input convenience form of [`grad_check_many`]; returns the max
/// relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    Ok(grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps, None)?.max_rel_error)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub op: &'static str,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 0, eps: DEFAULT_EPS, tolerance: DEFAULT_TOLERANCE, fault: None }
    }
}

type Probe = fn(&SuiteOptions, &mut Prng) -> Result<GradCheck>;

/// Weighted reduction `Σ r ⊙ y` with fixed random `r`, so no output
/// coordinate's gradient vanishes by symmetry (e.g. `Σ layer_norm(x)` ≡ 0).
fn weighted_sum<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, rng_seed: u64) -> Result<Var<'t, f64>> {
    let r = Tensor::uniform(&y.shape(), -1.0, 1.0, &mut Prng::new(rng_seed))?;
    y.mul(tape.constant(r))?.sum()
}

fn rand(shape: &[usize], rng: &mut Prng) -> Result<Tensor<f64>> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn check_conv(opts: &SuiteOptions, rng: &mut Prng, cin: usize, cout: usize, k: usize, spec: ConvSpec) -> Result<GradCheck> {
    let inputs = vec![rand(&[2, cin, 5, 5], rng)?, rand(&[cout, cin / spec.groups, k, k], rng)?, rand(&[cout], rng)?];
    let seed = rng.next_u64();
    grad_check_many(
        |tape, v| {
            let p = Conv2d { weight: v[1], bias: v[2], spec };
            let y = if spec.groups > 1 {
                nn::depthwise_conv2d(v[0], &p)?
            } else if k == 1 {
                nn::pointwise_conv2d(v[0], &p)?
            } else {
                nn::conv2d(v[0], &p)?
            };
            weighted_sum(tape, y, seed)
        },
        &inputs,
        opts.eps,
        opts.fault,
    )
}

fn check_layer_norm(opts: &SuiteOptions, rng: &mut Prng, mode: NormMode) -> Result<GradCheck> {
    let inputs = vec![rand(&[2, 4, 3, 3], rng)?, rand(&[4], rng)?, rand(&[4], rng)?];
    let seed = rng.next_u64();
    grad_check_many(
        |tape, v| {
            let p = LayerNorm { gamma: v[1], beta: v[2], eps: nn::norm::DEFAULT_EPS, mode };
            weighted_sum(tape, nn::layer_norm(v[0], &p)?, seed)
        },
        &inputs,
        opts.eps,
        opts.fault,
    )
}

/// Composite checks differentiate with respect to the input frames only;
/// parameters are fixed at their initial values. Parameter gradients are
/// covered by the per-op checks.
fn check_block(opts: &SuiteOptions, rng: &mut Prng, kind: ModuleKind) -> Result<GradCheck> {
    let cfg = ModelConfig { width: 4, enc_depth: 1, dec_depth: 1, enc_kind: kind, ..Default::default() };
    let block = build_model::<f64>(&cfg, rng.next_u64())?.encoder.remove(0);
    let x = rand(&[1, 4, 8, 8], rng)?;
    grad_check_many(
        |tape, v| {
            let bound = block.map(&mut |t| Ok::<_, Error>(tape.constant(t.clone())))?;
            model::block_forward(v[0], &bound)?.sum()
        },
        &[x],
        opts.eps,
        opts.fault,
    )
}

fn check_model(opts: &SuiteOptions, rng: &mut Prng) -> Result<GradCheck> {
    let cfg = ModelConfig { in_frames: 2, out_frames: 2, width: 4, enc_depth: 1, dec_depth: 1, ..Default::default() };
    let model = build_model::<f64>(&cfg, rng.next_u64())?;
    let x = rand(&[1, 2, 8, 8], rng)?;
    let target = rand(&[1, 2, 8, 8], rng)?;
    grad_check_many(
        |tape, v| model::forward(&model.bind_frozen(tape), v[0])?.mse(tape.constant(target.clone())),
        &[x],
        opts.eps,
        opts.fault,
    )
}

const SUITE: &[(&str, Probe)] = &[
    ("add", |o, r| binary(o, r, |a, b| a.add(b))),
    ("sub", |o, r| binary(o, r, |a, b| a.sub(b))),
    ("mul", |o, r| binary(o, r, |a, b| a.mul(b))),
    ("scale", |o, r| unary(o, r, |a| a.scale(-2.5))),
    ("silu", |o, r| unary(o, r, |a| a.silu())),
    ("conv2d", |o, r| check_conv(o, r, 3, 2, 3, ConvSpec::same(3, 1))),
    ("conv2d_stride2", |o, r| check_conv(o, r, 2, 3, 3, ConvSpec { stride: 2, padding: 1, groups: 1 })),
    ("depthwise_conv2d", |o, r| check_conv(o, r, 3, 3, 9, ConvSpec::same(9, 3))),
    ("pointwise_conv2d", |o, r| check_conv(o, r, 3, 2, 1, ConvSpec::same(1, 1))),
    ("layer_norm", |o, r| check_layer_norm(o, r, NormMode::Channel)),
    ("layer_norm_spatial", |o, r| check_layer_norm(o, r, NormMode::Spatial)),
    ("lkm_forward", |o, r| check_block(o, r, ModuleKind::Large)),
    ("skm_forward", |o, r| check_block(o, r, ModuleKind::Small)),
    ("model_forward", check_model),
];

fn unary(opts: &SuiteOptions, rng: &mut Prng, op: for<'t> fn(Var<'t, f64>) -> Result<Var<'t, f64>>) -> Result<GradCheck> {
    let inputs = vec![rand(&[2, 3, 4], rng)?];
    let seed = rng.next_u64();
    grad_check_many(|tape, v| weighted_sum(tape, op(v[0])?, seed), &inputs, opts.eps, opts.fault)
}

fn binary(
    opts: &SuiteOptions,
    rng: &mut Prng,
    op: for<'t> fn(Var<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
) -> Result<GradCheck> {
    let inputs = vec![rand(&[2, 3, 4], rng)?, rand(&[2, 3, 4], rng)?];
    let seed = rng.next_u64();
    grad_check_many(|tape, v| weighted_sum(tape, op(v[0], v[1])?, seed), &inputs, opts.eps, opts.fault)
}

/// Names of the ops covered by [`run_suite`].
pub fn suite_ops() -> Vec<&'static str> {
    SUITE.iter().map(|(name, _)| *name).collect()
}

/// Runs every check with inputs drawn from a fixed-seed stream per op.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    SUITE
        .iter()
        .enumerate()
        .map(|(i, (op, probe))| {
            let mut rng = Prng::new(substream(opts.seed, i as u64));
            let g = probe(opts, &mut rng)?;
            Ok(CheckResult { op, max_rel_error: g.max_rel_error, coordinates: g.coordinates, passed: g.max_rel_error <= opts.tolerance })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let err = grad_check(|_, v| v.scale(3.0)?.sum(), &x, DEFAULT_EPS).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn silu_conv_on_small_image() {
        let mut rng = Prng::new(5);
        let x = rand(&[1, 1, 5, 5], &mut rng).unwrap();
        let w = rand(&[1, 1, 3, 3], &mut rng).unwrap();
        let err = grad_check(
            |tape, v| {
                let y = v.conv2d(tape.constant(w.clone()), tape.constant(Tensor::zeros(&[1])?), ConvSpec::same(3, 1))?;
                y.silu()?.sum()
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let x = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        assert!(grad_check(|_, v| v.sum(), &x, 0.0).is_err());
        // exp overflow at the probe point
        let big = Tensor::from_vec(&[1], vec![-800.0]).unwrap();
        let err = grad_check(|t, v| v.scale(1.0)?.silu()?.mul(t.constant(Tensor::from_vec(&[1], vec![1e308])?))?.sum(), &big, 1e-4);
        assert!(err.is_ok() || matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn fault_is_detected() {
        let opts = SuiteOptions { fault: Some(Fault::LayerNorm), ..Default::default() };
        let mut rng = Prng::new(0);
        let g = check_layer_norm(&opts, &mut rng, NormMode::Channel).unwrap();
        assert!(g.max_rel_error > 1e-3);
    }

    #[test]
    fn primitive_ops_pass() {
        let results = run_suite(&SuiteOptions::default()).unwrap();
        assert!(results.len() >= 8);
        for r in results.iter().filter(|r| !r.op.ends_with("_forward")) {
            assert!(r.passed, "{} {:e}", r.op, r.max_rel_error);
        }
    }

    #[test]
    fn composite_error_is_truncation() {
        // central differences are O(eps²): shrinking eps tenfold shrinks the
        // discrepancy of a correct backward roughly a hundredfold
        let coarse = run_suite(&SuiteOptions { eps: 1e-3, ..Default::default() }).unwrap();
        let fine = run_suite(&SuiteOptions { eps: 1e-4, ..Default::default() }).unwrap();
        for (c, f) in coarse.iter().zip(&fine).filter(|(c, _)| c.op.ends_with("_forward")) {
            let ratio = c.max_rel_error / f.max_rel_error;
            assert!(ratio > 30.0, "{}: {:e} -> {:e}", c.op, c.max_rel_error, f.max_rel_error);
        }
    }
}
