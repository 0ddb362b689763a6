//! Flat `key=value` configuration text.
//!
//! Two layouts share one parser: one pair per line (config and manifest
//! files, `#` starts a comment) and space-separated pairs on a single line
//! (headers inside data files). Keys keep insertion order.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Result, XplError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or overwrites, keeping the original position on overwrite.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    /// Keeps only keys starting with `prefix.`, stripping the prefix.
    pub fn scoped(&self, prefix: &str) -> KvMap {
        let mut out = KvMap::new();
        let p = format!("{prefix}.");
        for (k, v) in self.iter() {
            if let Some(rest) = k.strip_prefix(&p) {
                out.set(rest, v);
            }
        }
        out
    }

    pub fn parse<T>(key: &str, value: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        value
            .parse::<T>()
            .map_err(|e| XplError::InvalidConfig(format!("{key}={value:?}: {e}")))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KvMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| XplError::parse(i + 1, format!("expected key=value, got {line:?}")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_inline(line: &str) -> Result<Self> {
        let mut kv = KvMap::new();
        for tok in line.split_ascii_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| XplError::parse(1, format!("expected key=value, got {tok:?}")))?;
            kv.set(k, v);
        }
        Ok(kv)
    }

    pub fn to_inline(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_layouts() {
        let kv = KvMap::from_text("# header\na = 1\n\nb=x # trailing\na=2\n").unwrap();
        assert_eq!(kv.get("a"), Some("2"));
        assert_eq!(kv.get("b"), Some("x"));
        assert_eq!(kv.to_text(), "a=2\nb=x\n");
        let inline = KvMap::from_inline("a=2 b=x").unwrap();
        assert_eq!(inline, kv);
        assert_eq!(kv.to_inline(), "a=2 b=x");
        assert!(KvMap::from_text("novalue\n").is_err());
    }

    #[test]
    fn scoping_and_merge() {
        let mut kv = KvMap::from_text("gen.seed=3\ntrain.beta=0.7\nother=1").unwrap();
        assert_eq!(kv.scoped("gen").to_inline(), "seed=3");
        let mut over = KvMap::new();
        over.set("gen.seed", 9);
        kv.merge(&over);
        assert_eq!(kv.scoped("gen").get("seed"), Some("9"));
        assert!(KvMap::parse::<usize>("k", "x").is_err());
    }
}
