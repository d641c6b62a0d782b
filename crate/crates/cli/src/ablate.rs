//! Ablation grids. Each finished row is written to `results.tsv` right away,
//! so an interrupted run resumes where it stopped.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, ValueEnum};

use arfa_core::data::{TEST_FILE, TRAIN_FILE};
use arfa_core::error::{Error, Result};
use arfa_core::io::write_atomic;
use arfa_core::kv;
use arfa_core::model::{build_model, ModelConfig, ModuleKind, LKM_KERNEL_SWEEP};
use arfa_core::train::{self as training, AdamState};

use crate::commands::{check_data, default_data_dir, load_split, resolve, ModelFlags, TrainFlags};
use crate::config::{pairs, Settings};
use crate::flag_overrides;
use crate::manifest::Manifest;
use crate::Common;

pub const RESULTS_FILE: &str = "results.tsv";
pub const MANIFEST_FILE: &str = "ablate.manifest";
pub const HEADER: &str = "variant\tmse\tmae\tssim\tpsnr\tparams\twall_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    /// Encoder/decoder module kinds.
    ReceptiveField,
    /// LKM depthwise kernel size.
    KernelSize,
}

impl Grid {
    fn name(self) -> &'static str {
        match self {
            Grid::ReceptiveField => "receptive-field",
            Grid::KernelSize => "kernel-size",
        }
    }
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub grid: Option<Grid>,
    /// Directory holding train.arfd / test.arfd [default: $ARFA_DATA_DIR or ./data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for results.tsv and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Discard previous results, even from a different configuration.
    #[arg(long)]
    pub force: bool,
}

pub fn defaults() -> Vec<(String, String)> {
    let mut d = pairs([("grid", "receptive-field".to_string()), ("data", default_data_dir()), ("out", "runs/ablate".into())]);
    let model = ModelConfig { width: 32, enc_depth: 2, dec_depth: 2, ..ModelConfig::default() };
    d.extend(model.to_kv());
    let train = training::TrainConfig { epochs: 30, ..Default::default() };
    d.extend(train.to_kv());
    d
}

/// Variant label and the model config it trains.
pub fn variants(grid: &str, base: &ModelConfig) -> Result<Vec<(String, ModelConfig)>> {
    use ModuleKind::{Large, Small};
    match grid {
        "receptive-field" => Ok([(Small, Small), (Small, Large), (Large, Large), (Large, Small)]
            .into_iter()
            .map(|(enc, dec)| {
                let label = format!("{}/{}", title(enc), title(dec));
                (label, ModelConfig { enc_kind: enc, dec_kind: dec, ..base.clone() })
            })
            .collect()),
        "kernel-size" => Ok(LKM_KERNEL_SWEEP
            .into_iter()
            .map(|k| (k.to_string(), ModelConfig { lkm_kernel: k, ..base.clone() }))
            .collect()),
        other => Err(Error::Config(format!("unknown grid {other:?} (expected receptive-field or kernel-size)"))),
    }
}

fn title(kind: ModuleKind) -> &'static str {
    match kind {
        ModuleKind::Large => "Large",
        ModuleKind::Small => "Small",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub variant: String,
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub params: usize,
    pub wall_s: f64,
}

impl Row {
    fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.3}",
            self.variant, self.mse, self.mae, self.ssim, self.psnr, self.params, self.wall_s
        )
    }
}

pub fn parse_results(path: &Path, text: &str) -> Result<Vec<Row>> {
    let bad = |line: usize, msg: &str| Error::Config(format!("{}: line {line}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(i + 2, "expected 7 tab-separated fields"));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i + 2, "malformed number"));
        rows.push(Row {
            variant: f[0].to_string(),
            mse: num(1)?,
            mae: num(2)?,
            ssim: num(3)?,
            psnr: num(4)?,
            params: f[5].parse().map_err(|_| bad(i + 2, "malformed parameter count"))?,
            wall_s: num(6)?,
        });
    }
    Ok(rows)
}

fn render(rows: &[Row]) -> String {
    let mut out = format!("{HEADER}\n");
    for r in rows {
        out += &r.to_tsv();
        out.push('\n');
    }
    out
}

/// Rows from an earlier run with identical settings, or a conflict error.
fn previous_rows(out: &Path, settings: &Settings, labels: &[String]) -> Result<Vec<Row>> {
    let results = out.join(RESULTS_FILE);
    if !results.exists() {
        return Ok(Vec::new());
    }
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e });
    let manifest_path = out.join(MANIFEST_FILE);
    let old = kv::to_map(kv::parse(&read(&manifest_path)?)?);
    let new = kv::to_map(settings.pairs().to_vec());
    let differing: Vec<&str> = old
        .keys()
        .chain(new.keys())
        .filter(|k| old.get(*k) != new.get(*k))
        .map(|k| k.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !differing.is_empty() {
        return Err(Error::ConfigConflict(format!(
            "{} was produced with different settings ({}); pass --force to start over",
            results.display(),
            differing.join(", ")
        )));
    }
    let rows = parse_results(&results, &read(&results)?)?;
    for (row, label) in rows.iter().zip(labels) {
        if &row.variant != label {
            return Err(Error::Config(format!("{}: unexpected variant {:?}", results.display(), row.variant)));
        }
    }
    if rows.len() > labels.len() {
        return Err(Error::Config(format!("{}: more rows than variants", results.display())));
    }
    Ok(rows)
}

pub fn run(a: AblateArgs) -> Result<bool> {
    let mut flags = flag_overrides! {
        "grid" => a.grid.map(Grid::name),
        "data" => a.data.as_ref().map(|p| p.display()),
        "out" => a.out.as_ref().map(|p| p.display()),
    };
    flags.extend(a.model.overrides());
    flags.extend(a.train.overrides());
    let s = resolve(defaults(), &a.common, flags)?;
    let base = s.model_config()?;
    let train_cfg = s.train_config()?;
    let grid = variants(s.get("grid"), &base)?;
    let labels: Vec<String> = grid.iter().map(|(l, _)| l.clone()).collect();

    let data_dir = PathBuf::from(s.get("data"));
    let out = PathBuf::from(s.get("out"));
    let train_set = load_split(&data_dir, TRAIN_FILE)?;
    let test_set = load_split(&data_dir, TEST_FILE)?;
    check_data(&base, &train_set, "training data")?;
    check_data(&base, &test_set, "test data")?;

    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let mut rows = if a.force { Vec::new() } else { previous_rows(&out, &s, &labels)? };
    let mut wall = Duration::from_secs_f64(rows.iter().map(|r| r.wall_s).sum());
    if !rows.is_empty() {
        eprintln!("resuming after {} completed variant(s)", rows.len());
    }
    let save = |rows: &[Row], wall: Duration| -> Result<()> {
        let results = out.join(RESULTS_FILE);
        write_atomic(&results, render(rows).as_bytes())?;
        let done = rows.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>().join(",");
        let notes = vec![("completed".to_string(), format!("{}/{} {done}", rows.len(), labels.len()))];
        Manifest { command: "ablate", settings: s.clone(), artifacts: vec![results], wall, notes }.write(&out.join(MANIFEST_FILE))
    };
    save(&rows, wall)?;

    for (label, cfg) in grid.iter().skip(rows.len()) {
        let start = Instant::now();
        eprintln!("variant {label}: training {} epochs", train_cfg.epochs);
        let mut model = build_model::<f32>(cfg, train_cfg.seed)?;
        let mut state = AdamState::new(&model);
        training::train(&mut model, &mut state, &train_set, None, &train_cfg, |l| eprintln!("  {label} {l}"))?;
        let m = training::evaluate(&model, &test_set)?;
        let elapsed = start.elapsed();
        wall += elapsed;
        rows.push(Row {
            variant: label.clone(),
            mse: m.mse,
            mae: m.mae,
            ssim: m.ssim,
            psnr: m.psnr,
            params: model.param_count(),
            wall_s: elapsed.as_secs_f64(),
        });
        save(&rows, wall)?;
    }

    print!("{}", render(&rows));
    if let Some(best) = rows.iter().min_by(|a, b| a.mse.total_cmp(&b.mse)) {
        println!("lowest mse: {}", best.variant);
    }
    Ok(true)
}

