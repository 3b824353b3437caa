//! `key = value` text used by config files, manifests and inline specs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse {value:?}")]
    Value { key: String, value: String },
}

/// Ordered string map; iteration order is key order so rendering is stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap(pub BTreeMap<String, String>);

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// One `key = value` per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| KvError::Syntax { line: n + 1, text: raw.to_string() })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax { line: n + 1, text: raw.to_string() });
            }
            map.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KvMap(map))
    }

    /// `k=v` pairs separated by whitespace or `;`, e.g. `blocks=2,2,2 growth=16`.
    pub fn parse_inline(text: &str) -> Result<Self, KvError> {
        let lines: Vec<&str> = text.split(|c: char| c == ';' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        Self::parse(&lines.join("\n"))
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| KvError::Value { key: key.to_string(), value: v.to_string() }))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.get_parsed(key)?.unwrap_or(default))
    }

    /// Later entries win.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn render_inline(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }
}

/// Comma-separated list of parseable items.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, KvError> {
    value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| KvError::Value { key: key.to_string(), value: value.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let m = KvMap::parse("# header\nlr = 3e-4  # initial\n\nepochs=200\n").unwrap();
        assert_eq!(m.get("lr"), Some("3e-4"));
        assert_eq!(m.parsed_or("epochs", 0usize).unwrap(), 200);
    }

    #[test]
    fn inline_pairs() {
        let m = KvMap::parse_inline("blocks=2,2,2; growth=16 initial=48").unwrap();
        assert_eq!(parse_list::<usize>("blocks", m.get("blocks").unwrap()).unwrap(), vec![2, 2, 2]);
        assert_eq!(m.get("initial"), Some("48"));
    }

    #[test]
    fn syntax_error_reports_line() {
        assert_eq!(
            KvMap::parse("a = 1\nnonsense").unwrap_err(),
            KvError::Syntax { line: 2, text: "nonsense".into() }
        );
    }

    #[test]
    fn render_parse_roundtrip() {
        let mut m = KvMap::new();
        m.insert("seed", 7);
        m.insert("name", "x y");
        assert_eq!(KvMap::parse(&m.render()).unwrap(), m);
    }
}
