//! The asymmetric receptive-field autoencoder.
//!
//! Frames are folded into channels, `(B, M·C, H, W)`. A 3×3 stem lifts them
//! to `D` hidden channels, an encoder stack of Large Kernel Modules extracts
//! global context, a decoder stack of Small Kernel Modules reconstructs local
//! detail, and a 1×1 readout produces `N·C` output channels. Spatial size is
//! preserved end to end unless `downsample` is set.
//!
//! ```text
//! LKM:  x ─┬─ dw k×k ─ 1×1 ─ SiLU ─ 1×1 ──────────┐
//!          └─ 3×3 ─ LayerNorm ─ SiLU ─────────────(+)─▶
//!
//! SKM:  x ─┬─ 3×3 ─ LayerNorm ─ SiLU ─┐
//!          └─ 3×3 ─ LayerNorm ─ SiLU ─(+)─ LayerNorm ─ SiLU ─▶
//! ```

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kv;
use crate::nn::norm::DEFAULT_EPS;
use crate::nn::{self, Conv2d, ConvSpec, LayerNorm, NormMode, Parameters};
use crate::rng::Prng;
use crate::tensor::{Scalar, Tensor};

/// Kernel sizes of the kernel-size ablation.
pub const LKM_KERNEL_SWEEP: [usize; 5] = [3, 5, 7, 9, 11];
const STEM_KERNEL: usize = 3;
const RESIDUAL_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Large,
    Small,
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModuleKind::Large => "large",
            ModuleKind::Small => "small",
        })
    }
}

impl FromStr for ModuleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "large" => Ok(ModuleKind::Large),
            "small" => Ok(ModuleKind::Small),
            _ => Err(Error::Config(format!("unknown module kind {s:?} (expected large|small)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_frames: usize,
    pub out_frames: usize,
    pub channels: usize,
    /// Hidden width `D`.
    pub width: usize,
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub lkm_kernel: usize,
    pub skm_kernel: usize,
    pub enc_kind: ModuleKind,
    pub dec_kind: ModuleKind,
    /// Hidden width of the LKM MLP as a multiple of `D`.
    pub mlp_ratio: usize,
    pub norm_mode: NormMode,
    /// 2×2 average pooling after the stem and 2× nearest upsampling before
    /// the readout.
    pub downsample: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_frames: 10,
            out_frames: 10,
            channels: 1,
            width: 64,
            enc_depth: 4,
            dec_depth: 4,
            lkm_kernel: 9,
            skm_kernel: 3,
            enc_kind: ModuleKind::Large,
            dec_kind: ModuleKind::Small,
            mlp_ratio: 1,
            norm_mode: NormMode::Channel,
            downsample: false,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 13] = [
        "in-frames",
        "out-frames",
        "channels",
        "width",
        "enc-depth",
        "dec-depth",
        "lkm-kernel",
        "skm-kernel",
        "enc-kind",
        "dec-kind",
        "mlp-ratio",
        "norm-mode",
        "downsample",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in-frames", self.in_frames),
            ("out-frames", self.out_frames),
            ("channels", self.channels),
            ("width", self.width),
            ("enc-depth", self.enc_depth),
            ("dec-depth", self.dec_depth),
            ("mlp-ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        for (name, k) in [("lkm-kernel", self.lkm_kernel), ("skm-kernel", self.skm_kernel)] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd and ≥ 1, got {k}")));
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.in_frames * self.channels
    }

    pub fn output_channels(&self) -> usize {
        self.out_frames * self.channels
    }

    /// Sets one field from its `key = value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "in-frames" => self.in_frames = kv::parse_value(key, value)?,
            "out-frames" => self.out_frames = kv::parse_value(key, value)?,
            "channels" => self.channels = kv::parse_value(key, value)?,
            "width" => self.width = kv::parse_value(key, value)?,
            "enc-depth" => self.enc_depth = kv::parse_value(key, value)?,
            "dec-depth" => self.dec_depth = kv::parse_value(key, value)?,
            "lkm-kernel" => self.lkm_kernel = kv::parse_value(key, value)?,
            "skm-kernel" => self.skm_kernel = kv::parse_value(key, value)?,
            "enc-kind" => self.enc_kind = value.parse()?,
            "dec-kind" => self.dec_kind = value.parse()?,
            "mlp-ratio" => self.mlp_ratio = kv::parse_value(key, value)?,
            "norm-mode" => self.norm_mode = value.parse()?,
            "downsample" => self.downsample = kv::parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let values = [
            self.in_frames.to_string(),
            self.out_frames.to_string(),
            self.channels.to_string(),
            self.width.to_string(),
            self.enc_depth.to_string(),
            self.dec_depth.to_string(),
            self.lkm_kernel.to_string(),
            self.skm_kernel.to_string(),
            self.enc_kind.to_string(),
            self.dec_kind.to_string(),
            self.mlp_ratio.to_string(),
            self.norm_mode.to_string(),
            self.downsample.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    /// Parses a complete set of model keys; every key must be present.
    pub fn from_kv(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for key in Self::KEYS {
            let (_, v) = pairs
                .iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| Error::Config(format!("missing model key {key:?}")))?;
            cfg.set(key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn block_kernel(&self, kind: ModuleKind) -> usize {
        match kind {
            ModuleKind::Large => self.lkm_kernel.max(RESIDUAL_KERNEL),
            ModuleKind::Small => self.skm_kernel,
        }
    }

    /// Theoretical receptive field (in input pixels) of one encoder output.
    pub fn encoder_receptive_field(&self) -> usize {
        let mut rf = 1 + (STEM_KERNEL - 1);
        let mut jump = 1;
        if self.downsample {
            rf += 1;
            jump = 2;
        }
        rf + self.enc_depth * (self.block_kernel(self.enc_kind) - 1) * jump
    }
}

/// Large Kernel Module: depthwise `k×k` conv and a 1×1–SiLU–1×1 MLP on the
/// main branch, 3×3 conv–LayerNorm–SiLU on the residual branch, summed.
#[derive(Debug, Clone, PartialEq)]
pub struct Lkm<P> {
    pub dconv: Conv2d<P>,
    pub mlp_fc1: Conv2d<P>,
    pub mlp_fc2: Conv2d<P>,
    pub res_conv: Conv2d<P>,
    pub res_norm: LayerNorm<P>,
}

/// Small Kernel Module: two parallel conv–LayerNorm–SiLU branches, summed,
/// then LayerNorm and SiLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Skm<P> {
    pub branch1_conv: Conv2d<P>,
    pub branch1_norm: LayerNorm<P>,
    pub branch2_conv: Conv2d<P>,
    pub branch2_norm: LayerNorm<P>,
    pub fuse_norm: LayerNorm<P>,
}

pub type LkmParams<T = f32> = Lkm<Tensor<T>>;
pub type SkmParams<T = f32> = Skm<Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub enum Block<P> {
    Large(Lkm<P>),
    Small(Skm<P>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArfaModel<P = Tensor<f32>> {
    pub config: ModelConfig,
    pub stem: Conv2d<P>,
    pub encoder: Vec<Block<P>>,
    pub decoder: Vec<Block<P>>,
    pub readout: Conv2d<P>,
}

impl<P> Lkm<P> {
    pub fn map<Q, E>(&self, f: &mut impl FnMut(&P) -> Result<Q, E>) -> Result<Lkm<Q>, E> {
        Ok(Lkm {
            dconv: self.dconv.map(f)?,
            mlp_fc1: self.mlp_fc1.map(f)?,
            mlp_fc2: self.mlp_fc2.map(f)?,
            res_conv: self.res_conv.map(f)?,
            res_norm: self.res_norm.map(f)?,
        })
    }
}

impl<P> Skm<P> {
    pub fn map<Q, E>(&self, f: &mut impl FnMut(&P) -> Result<Q, E>) -> Result<Skm<Q>, E> {
        Ok(Skm {
            branch1_conv: self.branch1_conv.map(f)?,
            branch1_norm: self.branch1_norm.map(f)?,
            branch2_conv: self.branch2_conv.map(f)?,
            branch2_norm: self.branch2_norm.map(f)?,
            fuse_norm: self.fuse_norm.map(f)?,
        })
    }
}

impl<P> Block<P> {
    pub fn map<Q, E>(&self, f: &mut impl FnMut(&P) -> Result<Q, E>) -> Result<Block<Q>, E> {
        Ok(match self {
            Block::Large(m) => Block::Large(m.map(f)?),
            Block::Small(m) => Block::Small(m.map(f)?),
        })
    }

    pub fn kind(&self) -> ModuleKind {
        match self {
            Block::Large(_) => ModuleKind::Large,
            Block::Small(_) => ModuleKind::Small,
        }
    }
}

impl<P> ArfaModel<P> {
    pub fn map<Q, E>(&self, f: &mut impl FnMut(&P) -> Result<Q, E>) -> Result<ArfaModel<Q>, E> {
        Ok(ArfaModel {
            config: self.config.clone(),
            stem: self.stem.map(f)?,
            encoder: self.encoder.iter().map(|b| b.map(f)).collect::<Result<_, E>>()?,
            decoder: self.decoder.iter().map(|b| b.map(f)).collect::<Result<_, E>>()?,
            readout: self.readout.map(f)?,
        })
    }
}

impl<P> Parameters<P> for Lkm<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.dconv.visit(&format!("{prefix}.dconv"), f);
        self.mlp_fc1.visit(&format!("{prefix}.mlp_fc1"), f);
        self.mlp_fc2.visit(&format!("{prefix}.mlp_fc2"), f);
        self.res_conv.visit(&format!("{prefix}.res_conv"), f);
        self.res_norm.visit(&format!("{prefix}.res_norm"), f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        self.dconv.visit_mut(f);
        self.mlp_fc1.visit_mut(f);
        self.mlp_fc2.visit_mut(f);
        self.res_conv.visit_mut(f);
        self.res_norm.visit_mut(f);
    }
}

impl<P> Parameters<P> for Skm<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.branch1_conv.visit(&format!("{prefix}.branch1_conv"), f);
        self.branch1_norm.visit(&format!("{prefix}.branch1_norm"), f);
        self.branch2_conv.visit(&format!("{prefix}.branch2_conv"), f);
        self.branch2_norm.visit(&format!("{prefix}.branch2_norm"), f);
        self.fuse_norm.visit(&format!("{prefix}.fuse_norm"), f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        self.branch1_conv.visit_mut(f);
        self.branch1_norm.visit_mut(f);
        self.branch2_conv.visit_mut(f);
        self.branch2_norm.visit_mut(f);
        self.fuse_norm.visit_mut(f);
    }
}

impl<P> Parameters<P> for Block<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        match self {
            Block::Large(m) => m.visit(prefix, f),
            Block::Small(m) => m.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        match self {
            Block::Large(m) => m.visit_mut(f),
            Block::Small(m) => m.visit_mut(f),
        }
    }
}

impl<P> Parameters<P> for ArfaModel<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        let join = |name: &str| if prefix.is_empty() { name.to_string() } else { format!("{prefix}.{name}") };
        self.stem.visit(&join("stem"), f);
        self.encoder.visit(&join("encoder"), f);
        self.decoder.visit(&join("decoder"), f);
        self.readout.visit(&join("readout"), f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        self.stem.visit_mut(f);
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
        self.readout.visit_mut(f);
    }
}

impl<T: Scalar> Lkm<Tensor<T>> {
    pub fn init(width: usize, kernel: usize, mlp_ratio: usize, norm_mode: NormMode, rng: &mut Prng) -> Result<Self> {
        let hidden = width * mlp_ratio;
        Ok(Lkm {
            dconv: Conv2d::init(width, width, kernel, ConvSpec::same(kernel, width), rng)?,
            mlp_fc1: Conv2d::init(width, hidden, 1, ConvSpec::same(1, 1), rng)?,
            mlp_fc2: Conv2d::init(hidden, width, 1, ConvSpec::same(1, 1), rng)?,
            res_conv: Conv2d::init(width, width, RESIDUAL_KERNEL, ConvSpec::same(RESIDUAL_KERNEL, 1), rng)?,
            res_norm: LayerNorm::new(width, DEFAULT_EPS, norm_mode)?,
        })
    }
}

impl<T: Scalar> Skm<Tensor<T>> {
    pub fn init(width: usize, kernel: usize, norm_mode: NormMode, rng: &mut Prng) -> Result<Self> {
        Ok(Skm {
            branch1_conv: Conv2d::init(width, width, kernel, ConvSpec::same(kernel, 1), rng)?,
            branch1_norm: LayerNorm::new(width, DEFAULT_EPS, norm_mode)?,
            branch2_conv: Conv2d::init(width, width, kernel, ConvSpec::same(kernel, 1), rng)?,
            branch2_norm: LayerNorm::new(width, DEFAULT_EPS, norm_mode)?,
            fuse_norm: LayerNorm::new(width, DEFAULT_EPS, norm_mode)?,
        })
    }
}

fn build_block<T: Scalar>(cfg: &ModelConfig, kind: ModuleKind, rng: &mut Prng) -> Result<Block<Tensor<T>>> {
    Ok(match kind {
        ModuleKind::Large => Block::Large(Lkm::init(cfg.width, cfg.lkm_kernel, cfg.mlp_ratio, cfg.norm_mode, rng)?),
        ModuleKind::Small => Block::Small(Skm::init(cfg.width, cfg.skm_kernel, cfg.norm_mode, rng)?),
    })
}

/// Deterministically initialized model: the same `(cfg, seed)` always gives
/// bitwise-identical parameters.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ArfaModel<Tensor<T>>> {
    cfg.validate()?;
    let mut rng = Prng::new(seed);
    let stem = Conv2d::init(cfg.input_channels(), cfg.width, STEM_KERNEL, ConvSpec::same(STEM_KERNEL, 1), &mut rng)?;
    let encoder = (0..cfg.enc_depth).map(|_| build_block(cfg, cfg.enc_kind, &mut rng)).collect::<Result<_>>()?;
    let decoder = (0..cfg.dec_depth).map(|_| build_block(cfg, cfg.dec_kind, &mut rng)).collect::<Result<_>>()?;
    let readout = Conv2d::init(cfg.width, cfg.output_channels(), 1, ConvSpec::same(1, 1), &mut rng)?;
    Ok(ArfaModel { config: cfg.clone(), stem, encoder, decoder, readout })
}

impl<T: Scalar> ArfaModel<Tensor<T>> {
    pub fn param_count(&self) -> usize {
        nn::param_count(self)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        nn::named_params(self, "")
    }

    /// Registers every parameter as a differentiable leaf on `tape`, in
    /// [`Parameters::visit`] order.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> ArfaModel<Var<'t, T>> {
        self.map::<_, std::convert::Infallible>(&mut |t| Ok(tape.leaf(t.clone()))).unwrap_or_else(|e| match e {})
    }

    /// Parameters recorded as constants: forward only, no gradients.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> ArfaModel<Var<'t, T>> {
        self.map::<_, std::convert::Infallible>(&mut |t| Ok(tape.constant(t.clone()))).unwrap_or_else(|e| match e {})
    }

    /// Inference on `(B, M·C, H, W)` without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        Ok(forward(&bound, tape.constant(x.clone()))?.value())
    }

    pub fn cast<U: Scalar>(&self) -> ArfaModel<Tensor<U>> {
        self.map::<_, std::convert::Infallible>(&mut |t| Ok(t.cast::<U>())).unwrap_or_else(|e| match e {})
    }
}

pub fn lkm_forward<'t, T: Scalar>(x: Var<'t, T>, p: &Lkm<Var<'t, T>>) -> Result<Var<'t, T>> {
    let global = nn::depthwise_conv2d(x, &p.dconv)?;
    let global = nn::pointwise_conv2d(global, &p.mlp_fc1)?.silu()?;
    let global = nn::pointwise_conv2d(global, &p.mlp_fc2)?;
    let local = nn::conv2d(x, &p.res_conv)?;
    let local = nn::layer_norm(local, &p.res_norm)?.silu()?;
    global.add(local)
}

pub fn skm_forward<'t, T: Scalar>(x: Var<'t, T>, p: &Skm<Var<'t, T>>) -> Result<Var<'t, T>> {
    let b1 = nn::layer_norm(nn::conv2d(x, &p.branch1_conv)?, &p.branch1_norm)?.silu()?;
    let b2 = nn::layer_norm(nn::conv2d(x, &p.branch2_conv)?, &p.branch2_norm)?.silu()?;
    nn::layer_norm(b1.add(b2)?, &p.fuse_norm)?.silu()
}

pub fn block_forward<'t, T: Scalar>(x: Var<'t, T>, block: &Block<Var<'t, T>>) -> Result<Var<'t, T>> {
    match block {
        Block::Large(p) => lkm_forward(x, p),
        Block::Small(p) => skm_forward(x, p),
    }
}

/// `readout(decoder(encoder(stem(x))))`: `(B, M·C, H, W)` → `(B, N·C, H, W)`.
pub fn forward<'t, T: Scalar>(model: &ArfaModel<Var<'t, T>>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let cfg = &model.config;
    if shape.len() != 4 || shape[1] != cfg.input_channels() {
        return Err(Error::geometry(
            "forward",
            format!("expected input (B, {}·{} = {}, H, W), got {shape:?}", cfg.in_frames, cfg.channels, cfg.input_channels()),
        ));
    }
    let mut h = nn::conv2d(x, &model.stem)?;
    if cfg.downsample {
        h = h.avg_pool2x()?;
    }
    for block in model.encoder.iter().chain(&model.decoder) {
        h = block_forward(h, block)?;
    }
    if cfg.downsample {
        h = h.upsample2x()?;
    }
    nn::pointwise_conv2d(h, &model.readout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(enc: ModuleKind, dec: ModuleKind) -> ModelConfig {
        ModelConfig { in_frames: 2, out_frames: 3, width: 4, enc_depth: 1, dec_depth: 2, enc_kind: enc, dec_kind: dec, ..Default::default() }
    }

    #[test]
    fn defaults_follow_protocol() {
        let cfg = ModelConfig::default();
        assert_eq!((cfg.in_frames, cfg.out_frames, cfg.lkm_kernel, cfg.skm_kernel), (10, 10, 9, 3));
        assert_eq!((cfg.enc_kind, cfg.dec_kind), (ModuleKind::Large, ModuleKind::Small));
    }

    #[test]
    fn validation() {
        for bad in [
            ModelConfig { lkm_kernel: 8, ..Default::default() },
            ModelConfig { width: 0, ..Default::default() },
            ModelConfig { enc_depth: 0, ..Default::default() },
        ] {
            assert!(build_model::<f32>(&bad, 0).is_err());
        }
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig { enc_kind: ModuleKind::Small, downsample: true, norm_mode: NormMode::Spatial, ..tiny(ModuleKind::Large, ModuleKind::Large) };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = build_model::<f32>(&cfg, 11).unwrap();
        let b = build_model::<f32>(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.param_count() > 0);
        assert_ne!(a, build_model::<f32>(&cfg, 12).unwrap());
    }

    #[test]
    fn ablation_kinds_are_honored() {
        let m = build_model::<f32>(&tiny(ModuleKind::Small, ModuleKind::Small), 0).unwrap();
        assert!(m.encoder.iter().chain(&m.decoder).all(|b| b.kind() == ModuleKind::Small));
        let m = build_model::<f32>(&tiny(ModuleKind::Large, ModuleKind::Small), 0).unwrap();
        assert!(m.encoder.iter().all(|b| b.kind() == ModuleKind::Large));
        assert!(m.decoder.iter().all(|b| b.kind() == ModuleKind::Small));
    }

    #[test]
    fn forward_shape_and_geometry_error() {
        let cfg = tiny(ModuleKind::Large, ModuleKind::Small);
        let m = build_model::<f32>(&cfg, 1).unwrap();
        let x = Tensor::uniform(&[2, 2, 7, 5], 0., 1., &mut Prng::new(2)).unwrap();
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 7, 5]);
        assert!(y.is_finite());
        assert!(m.predict(&Tensor::zeros(&[1, 3, 7, 5]).unwrap()).is_err());

        let down = build_model::<f32>(&ModelConfig { downsample: true, ..cfg }, 1).unwrap();
        let x = Tensor::uniform(&[1, 2, 8, 6], 0., 1., &mut Prng::new(2)).unwrap();
        assert_eq!(down.predict(&x).unwrap().shape(), &[1, 3, 8, 6]);
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = build_model::<f32>(&tiny(ModuleKind::Large, ModuleKind::Small), 0).unwrap();
        let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::BTreeSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names[0], "stem.weight");
        assert_eq!(names[2], "encoder.0.dconv.weight");
        assert_eq!(names.last().unwrap(), "readout.bias");
    }
}
