//! Layered settings: built-in defaults < `--config` file < flags.

use std::path::Path;
use std::str::FromStr;

use arfa_core::error::{Error, Result};
use arfa_core::kv;
use arfa_core::model::ModelConfig;
use arfa_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pairs: Vec<(String, String)>,
}

impl Settings {
    pub fn new(defaults: Vec<(String, String)>) -> Self {
        Settings { pairs: defaults }
    }

    /// Overrides existing keys; a key with no default is an error.
    pub fn apply(&mut self, pairs: impl IntoIterator<Item = (String, String)>, source: &str) -> Result<()> {
        for (k, v) in pairs {
            let slot = self
                .pairs
                .iter_mut()
                .find(|(key, _)| *key == k)
                .ok_or_else(|| Error::Config(format!("unknown key {k:?} in {source}")))?;
            slot.1 = v;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply(kv::parse(&text)?, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> &str {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).unwrap_or_else(|| panic!("no setting {key:?}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        kv::parse_value(key, self.get(key))
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let model: Vec<_> = self.pairs.iter().filter(|(k, _)| ModelConfig::KEYS.contains(&k.as_str())).cloned().collect();
        ModelConfig::from_kv(&model)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (k, v) in self.pairs.iter().filter(|(k, _)| TrainConfig::KEYS.contains(&k.as_str())) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn pairs<K: ToString, V: ToString>(items: impl IntoIterator<Item = (K, V)>) -> Vec<(String, String)> {
    items.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Collects `Some` flag values as `(key, value)` overrides.
#[macro_export]
macro_rules! flag_overrides {
    ($($key:literal => $value:expr),* $(,)?) => {{
        let mut out: Vec<(String, String)> = Vec::new();
        $(if let Some(v) = &$value {
            out.push(($key.to_string(), v.to_string()));
        })*
        out
    }};
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering() {
        let mut s = Settings::new(pairs([("a", "1"), ("b", "2"), ("c", "3")]));
        s.apply(pairs([("b", "20"), ("c", "30")]), "file").unwrap();
        s.apply(pairs([("c", "300")]), "flags").unwrap();
        assert_eq!((s.get("a"), s.get("b"), s.get("c")), ("1", "20", "300"));
        let err = s.apply(pairs([("d", "1")]), "x.cfg").unwrap_err().to_string();
        assert!(err.contains("\"d\"") && err.contains("x.cfg"));
    }
}
