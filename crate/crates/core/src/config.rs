//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every parse error
//! carries the line number and field name it came from.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                field: body.to_string(),
                message: "expected `key = value`".into(),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line,
                    field: String::new(),
                    message: "empty key".into(),
                });
            }
            if entries.contains_key(&key) {
                return Err(Error::Config {
                    line,
                    field: key,
                    message: "duplicate key".into(),
                });
            }
            entries.insert(key, (line, v.trim().to_string()));
        }
        Ok(KeyValues { entries })
    }

    /// Inserts or replaces a value (used for command-line overrides, line 0).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (0, value.into()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Config {
                line: *line,
                field: key.to_string(),
                message: format!("cannot parse `{v}`"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list of reals.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => parse_real_list(v).map(Some).map_err(|tok| Error::Config {
                line: *line,
                field: key.to_string(),
                message: format!("bad number `{tok}`"),
            }),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn ensure_known(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config {
                    line: *line,
                    field: k.clone(),
                    message: "unknown key".into(),
                });
            }
        }
        Ok(())
    }

    /// Deterministic `key = value` rendering, sorted by key.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, (_, v))| format!("{k} = {v}\n")).collect()
    }
}

/// Parses `a,b,c`; on failure returns the offending token.
pub fn parse_real_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| t.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_lines() {
        let kv = KeyValues::parse("# c\nmodel = heisenberg\n\nn = 10\neps = 0.5, 0.25\n").unwrap();
        assert_eq!(kv.raw("model"), Some("heisenberg"));
        assert_eq!(kv.get::<usize>("n").unwrap(), Some(10));
        assert_eq!(kv.get_list("eps").unwrap(), Some(vec![0.5, 0.25]));
        assert_eq!(kv.line_of("n"), 4);
        match kv.get::<f64>("model") {
            Err(Error::Config { line, field, .. }) => assert_eq!((line, field.as_str()), (2, "model")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        let err = KeyValues::parse("a = 1\noops\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        let kv = KeyValues::parse("zz = 1").unwrap();
        assert!(kv.ensure_known(&["a"]).is_err());
    }

    #[test]
    fn list_errors_name_the_token() {
        assert_eq!(parse_real_list("0.5, x1, 0.2"), Err("x1".to_string()));
        assert_eq!(parse_real_list("0.5,,0.2"), Err(String::new()));
        assert_eq!(parse_real_list("1e-1"), Ok(vec![0.1]));
    }

    #[test]
    fn overrides_replace_values() {
        let mut kv = KeyValues::parse("n = 1").unwrap();
        kv.set("n", "5");
        assert_eq!(kv.get::<u32>("n").unwrap(), Some(5));
        assert_eq!(kv.render(), "n = 5\n");
    }
}
