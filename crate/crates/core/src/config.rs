//! Plain `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{format, Error, Result};

/// Ordered key/value settings. Later insertions override earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return format(format!("config line {}: expected 'key = value'", n + 1));
            };
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return format(format!("config line {}: bad key '{k}'", n + 1));
            }
            entries.insert(k.replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.replace('-', "_"), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Typed lookup; a present but unparsable value is an error.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.entries
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Format(format!("config key '{key}': bad value '{v}'"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list of exactly `N` values.
    pub fn get_array<T: FromStr + Copy + Default, const N: usize>(&self, key: &str) -> Result<Option<[T; N]>> {
        let Some(v) = self.entries.get(key) else { return Ok(None) };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != N {
            return format(format!("config key '{key}': expected {N} comma-separated values"));
        }
        let mut out = [T::default(); N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| Error::Format(format!("config key '{key}': bad value '{p}'")))?;
        }
        Ok(Some(out))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Serializes in the same `key = value` syntax, sorted by key.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = Config::parse("# run\nmode = learned\ncthr=0.9  # scene\n\ngrid = 64, 64,32\npost-filter-period = 100\n").unwrap();
        assert_eq!(c.get_str("mode"), Some("learned"));
        assert_eq!(c.get::<f64>("cthr").unwrap(), Some(0.9));
        assert_eq!(c.get_array::<usize, 3>("grid").unwrap(), Some([64, 64, 32]));
        assert_eq!(c.get::<u64>("post_filter_period").unwrap(), Some(100));
        c.set("cthr", 0.5);
        assert_eq!(c.get::<f64>("cthr").unwrap(), Some(0.5));
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors() {
        assert!(Config::parse("novalue\n").is_err());
        assert!(Config::parse("a b = 1\n").is_err());
        let c = Config::parse("s = nine\ngrid = 1,2\n").unwrap();
        assert!(c.get::<usize>("s").is_err());
        assert!(c.get_array::<usize, 3>("grid").is_err());
        assert_eq!(c.get_or::<usize>("missing", 7).unwrap(), 7);
    }
}
