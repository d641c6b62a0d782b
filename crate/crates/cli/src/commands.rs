use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;

use arfa_core::autograd::Fault;
use arfa_core::checkpoint::{load_checkpoint, save_checkpoint};
use arfa_core::data::{self, Dataset, Geometry, SpriteOptions, TEST_FILE, TRAIN_FILE};
use arfa_core::error::{Error, Result};
use arfa_core::gradcheck::{run_suite, SuiteOptions};
use arfa_core::io::write_atomic;
use arfa_core::model::{build_model, ModelConfig};
use arfa_core::train::{self as training, AdamState, TrainConfig};

use crate::config::{pairs, Settings};
use crate::flag_overrides;
use crate::manifest::Manifest;
use crate::Common;

pub const DATA_DIR_ENV: &str = "ARFA_DATA_DIR";

pub fn default_data_dir() -> String {
    std::env::var(DATA_DIR_ENV).unwrap_or_else(|_| "data".into())
}

/// Defaults, then `--config`, then flags.
pub fn resolve(defaults: Vec<(String, String)>, common: &Common, flags: Vec<(String, String)>) -> Result<Settings> {
    let mut s = Settings::new(defaults);
    if let Some(path) = &common.config {
        s.apply_file(path)?;
    }
    s.apply(flags, "command-line flags")?;
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

pub fn load_split(data_dir: &Path, file: &str) -> Result<Dataset> {
    let path = data_dir.join(file);
    if !path.exists() {
        return Err(Error::Config(format!("{} not found; run `arfa gen-data --out {}` first", path.display(), data_dir.display())));
    }
    data::read_dataset(&path)
}

/// Dataset geometry under the model's frame split, or a conflict error.
pub fn check_data(model: &ModelConfig, dataset: &Dataset, what: &str) -> Result<Geometry> {
    let (frames, channels, _, _) = dataset.dims();
    if frames != model.in_frames + model.out_frames || channels != model.channels {
        return Err(Error::ConfigConflict(format!(
            "{what} has {frames} frames of {channels} channel(s), model expects {} + {} frames of {}",
            model.in_frames, model.out_frames, model.channels
        )));
    }
    dataset.geometry(model.in_frames)
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory [default: $ARFA_DATA_DIR or ./data]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of training sequences.
    #[arg(long)]
    pub train: Option<usize>,
    /// Number of test sequences.
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub in_frames: Option<usize>,
    #[arg(long)]
    pub out_frames: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Frame height in pixels.
    #[arg(long)]
    pub height: Option<usize>,
    /// Frame width in pixels.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub sprites: Option<usize>,
    #[arg(long)]
    pub sprite_size: Option<usize>,
    #[arg(long)]
    pub max_speed: Option<usize>,
    /// Overwrite existing dataset files.
    #[arg(long)]
    pub force: bool,
}

pub fn gen_data_defaults() -> Vec<(String, String)> {
    let g = Geometry::default();
    let s = SpriteOptions::default();
    pairs([
        ("out", default_data_dir()),
        ("seed", "0".into()),
        ("train", "256".into()),
        ("test", "64".into()),
        ("in-frames", g.in_frames.to_string()),
        ("out-frames", g.out_frames.to_string()),
        ("channels", g.channels.to_string()),
        ("height", g.height.to_string()),
        ("width", g.width.to_string()),
        ("sprites", s.n_sprites.to_string()),
        ("sprite-size", s.sprite_size.to_string()),
        ("max-speed", s.max_speed.to_string()),
    ])
}

pub fn gen_data(a: GenDataArgs) -> Result<bool> {
    let start = Instant::now();
    let flags = flag_overrides! {
        "out" => a.out.as_ref().map(|p| p.display()),
        "seed" => a.seed,
        "train" => a.train,
        "test" => a.test,
        "in-frames" => a.in_frames,
        "out-frames" => a.out_frames,
        "channels" => a.channels,
        "height" => a.height,
        "width" => a.width,
        "sprites" => a.sprites,
        "sprite-size" => a.sprite_size,
        "max-speed" => a.max_speed,
    };
    let s = resolve(gen_data_defaults(), &a.common, flags)?;
    let out = PathBuf::from(s.get("out"));
    let geometry = Geometry {
        in_frames: s.parse("in-frames")?,
        out_frames: s.parse("out-frames")?,
        channels: s.parse("channels")?,
        height: s.parse("height")?,
        width: s.parse("width")?,
    };
    let sprites = SpriteOptions { n_sprites: s.parse("sprites")?, sprite_size: s.parse("sprite-size")?, max_speed: s.parse("max-speed")? };
    let (train_path, test_path) = (out.join(TRAIN_FILE), out.join(TEST_FILE));
    if !a.force {
        if let Some(existing) = [&train_path, &test_path].into_iter().find(|p| p.exists()) {
            return Err(Error::Config(format!("{} already exists; pass --force to overwrite", existing.display())));
        }
    }
    let (train, test) = data::make_splits(&out, s.parse("seed")?, s.parse("train")?, s.parse("test")?, &geometry, &sprites)?;
    let manifest_path = out.join("gen-data.manifest");
    Manifest { command: "gen-data", settings: s, artifacts: vec![train.clone(), test.clone()], wall: start.elapsed(), notes: vec![] }
        .write(&manifest_path)?;
    println!("wrote {} and {}", train.display(), test.display());
    Ok(true)
}

/// Model-architecture flags shared by `train` and `ablate`.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub in_frames: Option<usize>,
    #[arg(long)]
    pub out_frames: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Hidden width D.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub enc_depth: Option<usize>,
    #[arg(long)]
    pub dec_depth: Option<usize>,
    #[arg(long)]
    pub lkm_kernel: Option<usize>,
    #[arg(long)]
    pub skm_kernel: Option<usize>,
    /// Encoder module kind: large or small.
    #[arg(long)]
    pub enc_kind: Option<String>,
    /// Decoder module kind: large or small.
    #[arg(long)]
    pub dec_kind: Option<String>,
    #[arg(long)]
    pub mlp_ratio: Option<usize>,
    /// Layer-norm axes: channel or spatial.
    #[arg(long)]
    pub norm_mode: Option<String>,
    #[arg(long)]
    pub downsample: Option<bool>,
}

impl ModelFlags {
    pub fn overrides(&self) -> Vec<(String, String)> {
        flag_overrides! {
            "in-frames" => self.in_frames,
            "out-frames" => self.out_frames,
            "channels" => self.channels,
            "width" => self.width,
            "enc-depth" => self.enc_depth,
            "dec-depth" => self.dec_depth,
            "lkm-kernel" => self.lkm_kernel,
            "skm-kernel" => self.skm_kernel,
            "enc-kind" => self.enc_kind,
            "dec-kind" => self.dec_kind,
            "mlp-ratio" => self.mlp_ratio,
            "norm-mode" => self.norm_mode,
            "downsample" => self.downsample,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seeds both initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate on the test split every N epochs (0 = never).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// constant or cosine.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub precision: Option<String>,
}

impl TrainFlags {
    pub fn overrides(&self) -> Vec<(String, String)> {
        flag_overrides! {
            "epochs" => self.epochs,
            "batch-size" => self.batch_size,
            "learning-rate" => self.lr,
            "seed" => self.seed,
            "eval-every" => self.eval_every,
            "schedule" => self.schedule,
            "precision" => self.precision,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding train.arfd / test.arfd [default: $ARFA_DATA_DIR or ./data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory for checkpoint, log and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Print the resolved settings and exit.
    #[arg(long)]
    pub dry_run: bool,
}

pub fn train_defaults() -> Vec<(String, String)> {
    let mut d = pairs([("data", default_data_dir()), ("out", "runs/train".into())]);
    d.extend(ModelConfig::default().to_kv());
    d.extend(TrainConfig::default().to_kv());
    d
}

pub fn train(a: TrainArgs) -> Result<bool> {
    let start = Instant::now();
    let mut flags = flag_overrides! {
        "data" => a.data.as_ref().map(|p| p.display()),
        "out" => a.out.as_ref().map(|p| p.display()),
    };
    flags.extend(a.model.overrides());
    flags.extend(a.train.overrides());
    let s = resolve(train_defaults(), &a.common, flags)?;
    let model_cfg = s.model_config()?;
    let train_cfg = s.train_config()?;
    if a.dry_run {
        print!("{}", arfa_core::kv::format(s.pairs()));
        return Ok(true);
    }
    let data_dir = PathBuf::from(s.get("data"));
    let out = PathBuf::from(s.get("out"));
    let train_set = load_split(&data_dir, TRAIN_FILE)?;
    check_data(&model_cfg, &train_set, "training data")?;
    let test_set = if train_cfg.eval_every > 0 {
        let t = load_split(&data_dir, TEST_FILE)?;
        check_data(&model_cfg, &t, "test data")?;
        Some(t)
    } else {
        None
    };

    create_dir(&out)?;
    let mut model = build_model::<f32>(&model_cfg, train_cfg.seed)?;
    let mut state = AdamState::new(&model);
    let mut log = String::new();
    training::train(&mut model, &mut state, &train_set, test_set.as_ref(), &train_cfg, |l| {
        println!("{l}");
        log += &format!("{l}\n");
    })?;
    let ckpt = out.join("checkpoint.arfc");
    let log_path = out.join("train.log");
    save_checkpoint(&ckpt, &model, Some(&state))?;
    write_atomic(&log_path, log.as_bytes())?;
    let notes = vec![("params".to_string(), model.param_count().to_string())];
    Manifest { command: "train", settings: s, artifacts: vec![ckpt.clone(), log_path], wall: start.elapsed(), notes }
        .write(&out.join("train.manifest"))?;
    eprintln!("saved {}", ckpt.display());
    Ok(true)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory holding the dataset [default: $ARFA_DATA_DIR or ./data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Which split to evaluate: test or train.
    #[arg(long)]
    pub split: Option<String>,
    /// Evaluate a baseline instead of the checkpoint: none or copy-last.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Input frames used by the baseline.
    #[arg(long)]
    pub in_frames: Option<usize>,
    /// Also write the report to this file (plus a manifest next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval_defaults() -> Vec<(String, String)> {
    pairs([
        ("checkpoint", "runs/train/checkpoint.arfc".to_string()),
        ("data", default_data_dir()),
        ("split", "test".into()),
        ("baseline", "none".into()),
        ("in-frames", ModelConfig::default().in_frames.to_string()),
        ("out", String::new()),
    ])
}

pub fn eval(a: EvalArgs) -> Result<bool> {
    let start = Instant::now();
    let flags = flag_overrides! {
        "checkpoint" => a.checkpoint.as_ref().map(|p| p.display()),
        "data" => a.data.as_ref().map(|p| p.display()),
        "split" => a.split,
        "baseline" => a.baseline,
        "in-frames" => a.in_frames,
        "out" => a.out.as_ref().map(|p| p.display()),
    };
    let s = resolve(eval_defaults(), &a.common, flags)?;
    let file = match s.get("split") {
        "test" => TEST_FILE,
        "train" => TRAIN_FILE,
        other => return Err(Error::Config(format!("unknown split {other:?} (expected test or train)"))),
    };
    let data_dir = PathBuf::from(s.get("data"));
    let dataset = load_split(&data_dir, file)?;
    let mut artifacts = Vec::new();
    let report = match s.get("baseline") {
        "none" => {
            let ckpt_path = PathBuf::from(s.get("checkpoint"));
            let ckpt = load_checkpoint(&ckpt_path)?;
            check_data(&ckpt.model.config, &dataset, &data_dir.join(file).display().to_string())?;
            artifacts.push(ckpt_path);
            training::evaluate(&ckpt.model, &dataset)?
        }
        "copy-last" => {
            let geometry = dataset.geometry(s.parse("in-frames")?)?;
            training::evaluate_copy_last(&dataset, &geometry)?
        }
        other => return Err(Error::Config(format!("unknown baseline {other:?} (expected none or copy-last)"))),
    };
    let text = report.to_kv_text();
    print!("{text}");
    let out = s.get("out").to_string();
    if !out.is_empty() {
        let out = PathBuf::from(out);
        write_atomic(&out, text.as_bytes())?;
        let mut manifest_path = out.clone().into_os_string();
        manifest_path.push(".manifest");
        artifacts.insert(0, out);
        Manifest { command: "eval", settings: s, artifacts, wall: start.elapsed(), notes: vec![] }.write(Path::new(&manifest_path))?;
    }
    Ok(true)
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed for the random probe inputs.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Finite-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Maximum accepted relative error.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Also write the report to this file (plus a manifest next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corrupt one backward rule to exercise failure reporting.
    #[arg(long, hide = true)]
    pub inject_fault: Option<Fault>,
}

pub fn gradcheck_defaults() -> Vec<(String, String)> {
    let d = SuiteOptions::default();
    pairs([("seed", d.seed.to_string()), ("eps", d.eps.to_string()), ("tolerance", d.tolerance.to_string()), ("out", String::new())])
}

pub fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let start = Instant::now();
    let flags = flag_overrides! {
        "seed" => a.seed,
        "eps" => a.eps,
        "tolerance" => a.tolerance,
        "out" => a.out.as_ref().map(|p| p.display()),
    };
    let s = resolve(gradcheck_defaults(), &a.common, flags)?;
    let opts = SuiteOptions { seed: s.parse("seed")?, eps: s.parse("eps")?, tolerance: s.parse("tolerance")?, fault: a.inject_fault };
    let results = run_suite(&opts)?;
    let mut text = format!("{:<20} {:>14} {:>8}  status\n", "op", "max_rel_error", "coords");
    for r in &results {
        text += &format!("{:<20} {:>14.3e} {:>8}  {}\n", r.op, r.max_rel_error, r.coordinates, if r.passed { "ok" } else { "FAIL" });
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.op).collect();
    text += &format!("{} ops checked (tolerance {:e}, eps {:e}), {} failed", results.len(), opts.tolerance, opts.eps, failed.len());
    if !failed.is_empty() {
        text += &format!(": {}", failed.join(", "));
    }
    text += "\n";
    print!("{text}");
    let out = s.get("out").to_string();
    if !out.is_empty() {
        let out = PathBuf::from(out);
        write_atomic(&out, text.as_bytes())?;
        let mut manifest_path = out.clone().into_os_string();
        manifest_path.push(".manifest");
        let mut notes = vec![("failed".to_string(), failed.len().to_string())];
        if let Some(f) = a.inject_fault {
            notes.push(("injected-fault".into(), f.to_string()));
        }
        Manifest { command: "gradcheck", settings: s, artifacts: vec![out], wall: start.elapsed(), notes }.write(Path::new(&manifest_path))?;
    }
    Ok(failed.is_empty())
}
