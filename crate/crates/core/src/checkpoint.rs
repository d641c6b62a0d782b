//! `ARFC` checkpoints: model config, parameters and optional Adam state.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, Reader};
use crate::kv;
use crate::model::{build_model, ArfaModel, ModelConfig};
use crate::tensor::Tensor;
use crate::train::AdamState;

pub const MAGIC: &[u8; 4] = b"ARFC";
pub const VERSION: u32 = 1;
const ADAM_STEP_KEY: &str = "adam-step";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ArfaModel,
    pub adam: Option<AdamState>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Config(format!("{name}: rank {} too large", t.rank())))?;
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Config(format!("{name}: dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    io::put_f32s(out, t.data());
    Ok(())
}

pub fn encode(model: &ArfaModel, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let params = model.named_params();
    let mut config = model.config.to_kv();
    if let Some(a) = adam {
        if a.m.len() != params.len() || a.v.len() != params.len() {
            return Err(Error::Config(format!("optimizer state has {} moments for {} parameters", a.m.len(), params.len())));
        }
        config.push((ADAM_STEP_KEY.into(), a.step.to_string()));
    }
    let config = kv::format(&config);

    let mut tensors: Vec<(String, &Tensor<f32>)> = params.iter().map(|(n, t)| (n.clone(), *t)).collect();
    if let Some(a) = adam {
        for (prefix, moments) in [(ADAM_M, &a.m), (ADAM_V, &a.v)] {
            tensors.extend(params.iter().zip(moments.iter()).map(|((n, _), t)| (format!("{prefix}{n}"), t)));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t)?;
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &ArfaModel, adam: Option<&AdamState>) -> Result<()> {
    io::write_atomic(path, &encode(model, adam)?)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(path, bytes);
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(r.error(0, "bad magic (expected \"ARFC\")"));
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let config_len = r.u32("config length")? as usize;
    let config_at = r.pos;
    let text = std::str::from_utf8(r.take(config_len, "config block")?).map_err(|_| r.error(config_at, "config block is not UTF-8"))?;
    let pairs = kv::parse(text).map_err(|e| r.error(config_at, e.to_string()))?;
    let (adam_pairs, model_pairs): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(k, _)| k == ADAM_STEP_KEY);
    if let Some((k, _)) = model_pairs.iter().find(|(k, _)| !ModelConfig::KEYS.contains(&k.as_str())) {
        return Err(r.error(config_at, format!("unknown config key {k:?}")));
    }
    let config = ModelConfig::from_kv(&model_pairs).map_err(|e| r.error(config_at, e.to_string()))?;
    let adam_step = match adam_pairs.as_slice() {
        [] => None,
        [(k, v)] => Some(kv::parse_value::<u64>(k, v).map_err(|e| r.error(config_at, e.to_string()))?),
        _ => return Err(r.error(config_at, format!("duplicate {ADAM_STEP_KEY}"))),
    };

    let count = r.u32("tensor count")? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| r.error(at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8("tensor rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("tensor dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.error(at, format!("{name}: dimensions overflow")))?;
        let data = r.f32s(n, "tensor payload")?;
        let t = Tensor::from_vec(&shape, data).map_err(|e| r.error(at, format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), (at, t)).is_some() {
            return Err(r.error(at, format!("duplicate tensor {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.error(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let template = build_model::<f32>(&config, 0)?;
    let names: Vec<String> = template.named_params().into_iter().map(|(n, _)| n).collect();
    let mut take = |name: &str, expected: &[usize]| -> Result<Tensor<f32>> {
        let (at, t) = tensors.remove(name).ok_or_else(|| r.error(bytes.len(), format!("missing tensor {name:?}")))?;
        if t.shape() != expected {
            return Err(r.error(at, format!("tensor {name:?} has shape {:?}, config implies {expected:?}", t.shape())));
        }
        Ok(t)
    };
    let mut i = 0;
    let model = template.map(&mut |t| {
        i += 1;
        take(&names[i - 1], t.shape())
    })?;
    let adam = match adam_step {
        None => None,
        Some(step) => {
            let params = model.named_params();
            let mut moments = |prefix: &str| params.iter().map(|(n, t)| take(&format!("{prefix}{n}"), t.shape())).collect::<Result<Vec<_>>>();
            let m = moments(ADAM_M)?;
            let v = moments(ADAM_V)?;
            Some(AdamState { step, m, v })
        }
    };
    if let Some((name, (at, _))) = tensors.into_iter().next() {
        return Err(r.error(at, format!("unknown tensor name {name:?}")));
    }
    Ok(Checkpoint { model, adam })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(path, &io::read(path)?)
}

/// Loads and requires the stored model config to equal `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.model.config != expected {
        let diffs: Vec<String> = ckpt
            .model
            .config
            .to_kv()
            .into_iter()
            .zip(expected.to_kv())
            .filter(|(a, b)| a.1 != b.1)
            .map(|((k, stored), (_, want))| format!("{k}: checkpoint {stored}, requested {want}"))
            .collect();
        return Err(Error::ConfigConflict(format!("{}: {}", path.display(), diffs.join("; "))));
    }
    Ok(ckpt)
}
