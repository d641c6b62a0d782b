//! Adam training loop and evaluation.

use std::fmt;
use std::str::FromStr;

use crate::autograd::Tape;
use crate::data::{Dataset, Geometry};
use crate::error::{Error, Result};
use crate::kv;
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::{forward, ArfaModel};
use crate::nn::{self, Parameters};
use crate::rng::{substream, Prng};
use crate::tensor::{Scalar, Tensor};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Constant,
    /// `lr·(1 + cos(π·epoch/epochs))/2`, evaluated per epoch.
    Cosine,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            _ => Err(Error::Config(format!("unknown schedule {s:?} (expected constant or cosine)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Evaluate every this many epochs (and after the last); 0 disables.
    pub eval_every: usize,
    pub precision: Precision,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 0,
            precision: Precision::F32,
            schedule: Schedule::Constant,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 10] = [
        "batch-size",
        "epochs",
        "learning-rate",
        "beta1",
        "beta2",
        "adam-eps",
        "seed",
        "eval-every",
        "precision",
        "schedule",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch-size" => self.batch_size = kv::parse_value(key, value)?,
            "epochs" => self.epochs = kv::parse_value(key, value)?,
            "learning-rate" => self.learning_rate = kv::parse_value(key, value)?,
            "beta1" => self.beta1 = kv::parse_value(key, value)?,
            "beta2" => self.beta2 = kv::parse_value(key, value)?,
            "adam-eps" => self.adam_eps = kv::parse_value(key, value)?,
            "seed" => self.seed = kv::parse_value(key, value)?,
            "eval-every" => self.eval_every = kv::parse_value(key, value)?,
            "precision" => self.precision = value.parse()?,
            "schedule" => self.schedule = value.parse()?,
            other => return Err(Error::Config(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let values = [
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.learning_rate.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.adam_eps.to_string(),
            self.seed.to_string(),
            self.eval_every.to_string(),
            self.precision.to_string(),
            self.schedule.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning-rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!("adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2)));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config(format!("adam-eps must be > 0, got {}", self.adam_eps)));
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam {
        Adam { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let t = epoch as f64 / self.epochs.max(1) as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments in parameter visit order, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<M: Parameters<Tensor<T>> + ?Sized>(params: &M) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(Tensor::zeros_like(t)));
        AdamState { step: 0, v: m.clone(), m }
    }
}

/// One Adam update with bias correction; `step` is incremented first.
pub fn adam_step<T: Scalar, M: Parameters<Tensor<T>> + ?Sized>(
    params: &mut M,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    h: &Adam,
) -> Result<()> {
    let mut shapes = Vec::new();
    params.visit("", &mut |_, t| shapes.push(t.shape().to_vec()));
    if shapes.len() != grads.len() || shapes.len() != state.m.len() || shapes.len() != state.v.len() {
        return Err(Error::Config(format!(
            "adam_step: {} parameters, {} gradients, {}/{} moments",
            shapes.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    for (i, s) in shapes.iter().enumerate() {
        for other in [grads[i].shape(), state.m[i].shape(), state.v[i].shape()] {
            if other != s.as_slice() {
                return Err(Error::ShapeMismatch { op: "adam_step", left: s.clone(), right: other.to_vec() });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (h.beta1, h.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut i = 0;
    params.visit_mut(&mut |p| {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g.as_f64();
            let mn = b1 * m.as_f64() + (1.0 - b1) * g;
            let vn = b2 * v.as_f64() + (1.0 - b2) * g * g;
            *m = T::from_f64(mn);
            *v = T::from_f64(vn);
            let update = h.lr * (mn / c1) / ((vn / c2).sqrt() + h.eps);
            *p = T::from_f64(p.as_f64() - update);
        }
        i += 1;
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub metrics: Option<MetricsReport>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6e}", self.epoch, self.loss)?;
        if let Some(m) = &self.metrics {
            write!(f, " mse={:.6} mae={:.6} ssim={:.6} psnr={:.6}", m.mse, m.mae, m.ssim, m.psnr)?;
        }
        Ok(())
    }
}

fn check_geometry(model: &ArfaModel, dataset: &Dataset) -> Result<Geometry> {
    let cfg = &model.config;
    let g = dataset.geometry(cfg.in_frames)?;
    if g.out_frames != cfg.out_frames || g.channels != cfg.channels {
        return Err(Error::Config(format!(
            "dataset geometry {g} does not match model (in-frames {}, out-frames {}, channels {})",
            cfg.in_frames, cfg.out_frames, cfg.channels
        )));
    }
    Ok(g)
}

/// Per-pixel mean squared error of `model` over `indices`, one
/// forward/backward per mini-batch; returns the batch loss.
fn train_batch(model: &mut ArfaModel, state: &mut AdamState, inputs: Tensor<f32>, targets: Tensor<f32>, adam: &Adam) -> Result<f64> {
    let grads = {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let pred = forward(&bound, tape.constant(inputs))?;
        let loss = pred.mse(tape.constant(targets))?;
        let value = loss.value().data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite { what: format!("loss {value}") });
        }
        let grads = tape.backward(loss)?;
        let grads = nn::named_params(&bound, "").into_iter().map(|(_, v)| grads.wrt(*v)).collect::<Result<Vec<_>>>()?;
        (grads, value)
    };
    adam_step(model, &grads.0, state, adam)?;
    Ok(grads.1)
}

/// Trains in place. `on_epoch` receives each log record as it is produced.
pub fn train(
    model: &mut ArfaModel,
    state: &mut AdamState,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if cfg.precision != Precision::F32 {
        return Err(Error::Config("training runs in f32; f64 is reserved for gradient checking".into()));
    }
    let geometry = check_geometry(model, train_set)?;
    if let Some(e) = eval_set {
        check_geometry(model, e)?;
    }
    let shuffle_root = substream(cfg.seed, SHUFFLE_STREAM);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let adam = Adam { lr: cfg.lr_at(epoch - 1), ..cfg.adam() };
        let order = Prng::new(substream(shuffle_root, epoch as u64)).permutation(train_set.len());
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(idx, &geometry)?;
            let loss = train_batch(model, state, batch.inputs, batch.targets, &adam).map_err(|e| match e {
                Error::NonFinite { what } => Error::NonFinite { what: format!("{what} at epoch {epoch}, batch {b}") },
                other => other,
            })?;
            total += loss * idx.len() as f64;
        }
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let metrics = match eval_set {
            Some(e) if due => Some(evaluate(model, e)?),
            _ => None,
        };
        let log = EpochLog { epoch, loss: total / train_set.len() as f64, metrics };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Mean per-pixel squared error of `model` over the whole dataset.
pub fn dataset_loss(model: &ArfaModel, dataset: &Dataset) -> Result<f64> {
    let geometry = check_geometry(model, dataset)?;
    let mut total = 0.0;
    for idx in (0..dataset.len()).collect::<Vec<_>>().chunks(EVAL_BATCH) {
        let batch = dataset.batch(idx, &geometry)?;
        let pred = model.predict(&batch.inputs)?;
        let se: f64 = pred.data().iter().zip(batch.targets.data()).map(|(&p, &t)| ((p - t) as f64).powi(2)).sum();
        total += se;
    }
    Ok(total / (dataset.len() * geometry.out_frames * geometry.frame_len()) as f64)
}

/// Metrics of any predictor mapping `[B, M·C, H, W]` to `[B, N·C, H, W]`.
pub fn evaluate_with(
    dataset: &Dataset,
    geometry: &Geometry,
    mut predict: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut acc = MetricsAccumulator::new(1.0);
    let frame_shape = |b: usize| [b, geometry.out_frames, geometry.channels, geometry.height, geometry.width];
    for idx in (0..dataset.len()).collect::<Vec<_>>().chunks(EVAL_BATCH) {
        let batch = dataset.batch(idx, geometry)?;
        let pred = predict(&batch.inputs)?;
        if pred.shape() != batch.targets.shape() {
            return Err(Error::ShapeMismatch { op: "evaluate", left: pred.shape().to_vec(), right: batch.targets.shape().to_vec() });
        }
        acc.add(&pred.into_reshaped(&frame_shape(idx.len()))?, &batch.targets.into_reshaped(&frame_shape(idx.len()))?)?;
    }
    acc.finish()
}

pub fn evaluate(model: &ArfaModel, dataset: &Dataset) -> Result<MetricsReport> {
    let geometry = check_geometry(model, dataset)?;
    evaluate_with(dataset, &geometry, |x| model.predict(x))
}

/// Repeats the last input frame for every output frame.
pub fn copy_last_frame(inputs: &Tensor<f32>, geometry: &Geometry) -> Result<Tensor<f32>> {
    let (b, mc, h, w) = inputs.dims4("copy_last_frame")?;
    if mc != geometry.in_frames * geometry.channels {
        return Err(Error::geometry("copy_last_frame", format!("expected {} input channels, got {mc}", geometry.in_frames * geometry.channels)));
    }
    let frame = geometry.channels * h * w;
    let mut out = Vec::with_capacity(b * geometry.out_frames * frame);
    for s in inputs.data().chunks(mc * h * w) {
        let last = &s[s.len() - frame..];
        for _ in 0..geometry.out_frames {
            out.extend_from_slice(last);
        }
    }
    Tensor::from_vec(&[b, geometry.out_frames * geometry.channels, h, w], out)
}

pub fn evaluate_copy_last(dataset: &Dataset, geometry: &Geometry) -> Result<MetricsReport> {
    evaluate_with(dataset, geometry, |x| copy_last_frame(x, geometry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SpriteOptions};
    use crate::model::{build_model, ModelConfig};

    fn tiny() -> ModelConfig {
        ModelConfig { in_frames: 2, out_frames: 2, width: 4, enc_depth: 1, dec_depth: 1, lkm_kernel: 5, ..Default::default() }
    }

    fn geometry() -> Geometry {
        Geometry { in_frames: 2, out_frames: 2, channels: 1, height: 12, width: 12 }
    }

    fn toy_data(n: u64) -> Dataset {
        generate(&(0..n).collect::<Vec<_>>(), &geometry(), &SpriteOptions { sprite_size: 4, ..Default::default() }).unwrap()
    }

    #[test]
    fn adam_hand_step() {
        let mut p = vec![Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap()];
        let mut state = AdamState::new(&p);
        let h = Adam { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        adam_step(&mut p, &[Tensor::from_vec(&[1], vec![1.0]).unwrap()], &mut state, &h).unwrap();
        assert!((p[0].data()[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_grad_and_zero_lr_leave_params() {
        let mut model = build_model::<f32>(&tiny(), 0).unwrap();
        let before = model.clone();
        let mut state = AdamState::new(&model);
        let zeros: Vec<Tensor<f32>> = state.m.clone();
        adam_step(&mut model, &zeros, &mut state, &TrainConfig::default().adam()).unwrap();
        assert_eq!(model, before);

        let cfg = TrainConfig { epochs: 2, batch_size: 3, learning_rate: 0.0, ..Default::default() };
        let mut state = AdamState::new(&model);
        train(&mut model, &mut state, &toy_data(5), None, &cfg, |_| {}).unwrap();
        assert_eq!(model, before);
        assert!(adam_step(&mut model, &zeros[1..], &mut state, &cfg.adam()).is_err());
    }

    #[test]
    fn deterministic_runs() {
        let data = toy_data(6);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
        let run = || {
            let mut m = build_model::<f32>(&tiny(), 1).unwrap();
            let mut s = AdamState::new(&m);
            let logs = train(&mut m, &mut s, &data, None, &cfg, |_| {}).unwrap();
            (m, s, logs)
        };
        let (a, sa, la) = run();
        let (b, sb, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(sa, sb);
        for ((_, x), (_, y)) in a.named_params().iter().zip(b.named_params()) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn zero_sequences_reach_machine_loss() {
        let g = geometry();
        let zeros = Dataset::from_sequences(&vec![Tensor::zeros(&[4, 1, 12, 12]).unwrap(); 4]).unwrap();
        let mut model = build_model::<f32>(&tiny(), 2).unwrap();
        let mut state = AdamState::new(&model);
        let cfg = TrainConfig { epochs: 20, batch_size: 4, learning_rate: 1e-2, ..Default::default() };
        let logs = train(&mut model, &mut state, &zeros, None, &cfg, |_| {}).unwrap();
        assert!(logs.last().unwrap().loss < 1e-6, "{:?}", logs.last());
        assert_eq!(evaluate_copy_last(&zeros, &g).unwrap().mse, 0.0);
    }

    #[test]
    fn first_epoch_improves_and_logs() {
        let data = toy_data(8);
        let mut model = build_model::<f32>(&tiny(), 3).unwrap();
        let before = dataset_loss(&model, &data).unwrap();
        let mut state = AdamState::new(&model);
        let cfg = TrainConfig { epochs: 1, batch_size: 4, eval_every: 1, ..Default::default() };
        let mut lines = Vec::new();
        train(&mut model, &mut state, &data, Some(&data), &cfg, |l| lines.push(l.to_string())).unwrap();
        assert!(dataset_loss(&model, &data).unwrap() < before);
        assert!(lines[0].starts_with("epoch=1 loss=") && lines[0].contains(" ssim="), "{}", lines[0]);
        let report = evaluate(&model, &data).unwrap();
        assert!(report.mse.is_finite() && report.mae.is_finite() && report.ssim.is_finite() && report.psnr.is_finite());
    }

    #[test]
    fn oracle_and_errors() {
        let data = toy_data(3);
        let g = geometry();
        let mut next = 0;
        let perfect = evaluate_with(&data, &g, |x| {
            let idx: Vec<usize> = (next..next + x.shape()[0]).collect();
            next += idx.len();
            Ok(data.batch(&idx, &g)?.targets)
        })
        .unwrap();
        assert_eq!(perfect.mse, 0.0);
        assert!((perfect.ssim - 1.0).abs() < 1e-6);

        let mut model = build_model::<f32>(&tiny(), 0).unwrap();
        let mut state = AdamState::new(&model);
        let f64_cfg = TrainConfig { precision: Precision::F64, ..Default::default() };
        assert!(train(&mut model, &mut state, &data, None, &f64_cfg, |_| {}).is_err());
        let wrong = build_model::<f32>(&ModelConfig { out_frames: 3, ..tiny() }, 0).unwrap();
        assert!(evaluate(&wrong, &data).is_err());
    }

    #[test]
    fn non_finite_loss_names_batch() {
        let mut data = toy_data(4);
        data.data.data_mut()[0] = f32::NAN;
        let mut model = build_model::<f32>(&tiny(), 0).unwrap();
        let mut state = AdamState::new(&model);
        let cfg = TrainConfig { epochs: 1, batch_size: 1, ..Default::default() };
        let err = train(&mut model, &mut state, &data, None, &cfg, |_| {}).unwrap_err().to_string();
        assert!(err.contains("epoch 1, batch"), "{err}");
    }

    #[test]
    fn config_kv() {
        let mut cfg = TrainConfig::default();
        let source = TrainConfig { epochs: 7, schedule: Schedule::Cosine, ..Default::default() };
        for (k, v) in source.to_kv() {
            cfg.set(&k, &v).unwrap();
        }
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr_at(7), 0.0);
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(cfg.set("momentum", "1").is_err());
    }
}
