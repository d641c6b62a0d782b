//! Flat `key = value` text used for config files, manifests, checkpoint
//! config blocks and metric reports. `#` starts a comment line.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn format<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    pairs.iter().map(|(k, v)| format!("{} = {}\n", k.as_ref(), v.as_ref())).collect()
}

pub fn to_map(pairs: Vec<(String, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().collect()
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        let text = "# comment\n\nwidth = 32\n lr=0.001 \n";
        let pairs = parse(text).unwrap();
        assert_eq!(pairs, vec![("width".into(), "32".into()), ("lr".into(), "0.001".into())]);
        assert_eq!(parse(&format(&pairs)).unwrap(), pairs);
        assert!(parse("novalue\n").is_err());
        assert!(parse_value::<usize>("width", "x").is_err());
    }
}
