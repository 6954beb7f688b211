//! Flat `key=value` text files, one pair per line.
//!
//! Used for simulator configs, fit results and signal metadata. Blank lines
//! and lines starting with `#` are ignored. Floats are written with Rust's
//! shortest round-trip formatting, so a write/read cycle is lossless.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered list of pairs for writing.
#[derive(Debug, Default, Clone)]
pub struct KvWriter {
    pairs: Vec<(String, String)>,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.pairs.push((key.to_string(), value.to_string()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parsed pairs for reading.
#[derive(Debug, Default, Clone)]
pub struct KvMap {
    map: BTreeMap<String, (usize, String)>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got {line:?}")))?;
            let key = k.trim().to_string();
            if map.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::parse(i + 1, format!("duplicate key {key:?}")));
            }
        }
        Ok(Self { map })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(*line, format!("bad value for {key}: {v:?}"))),
        }
    }

    /// The pairs whose key starts with `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> KvMap {
        let dotted = format!("{prefix}.");
        let map = self
            .map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&dotted).map(|s| (s.to_string(), v.clone())))
            .collect();
        KvMap { map }
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::invalid(format!("missing key {key:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_floats_exactly() {
        let x = 0.1_f64 + 0.2;
        let mut w = KvWriter::new();
        w.put("x", x).put("name", "abc");
        let m = KvMap::parse(&w.to_text()).unwrap();
        assert_eq!(m.require::<f64>("x").unwrap().to_bits(), x.to_bits());
        assert_eq!(m.get_str("name"), Some("abc"));
    }

    #[test]
    fn rejects_malformed_and_duplicate_lines() {
        assert!(KvMap::parse("a=1\nnope\n").is_err());
        assert!(KvMap::parse("a=1\na=2\n").is_err());
        assert!(KvMap::parse("# comment\n\na = 3\n").is_ok());
    }
}
