//! Plain-text `key = value` settings files.
//!
//! Blank lines and `#` comments are ignored. Later keys override earlier
//! ones, and [`Settings::set`] overrides both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Settings {
    source: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl Settings {
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.clone(),
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            entries.insert(k.to_string(), (v.trim().to_string(), i + 1));
        }
        Ok(Self { source, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Override from a `key=value` pair given on the command line.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries
            .insert(key.trim().to_string(), (value.trim().to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((raw, line)) => raw.parse().map(Some).map_err(|_| Error::Parse {
                path: self.source.clone(),
                line: *line,
                msg: format!("invalid value {raw:?} for {key}"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.source.clone(),
            line: 0,
            msg: format!("missing key {key}"),
        })
    }

    pub(crate) fn invalid(&self, key: &str, msg: impl Into<String>) -> Error {
        let line = self.entries.get(key).map_or(0, |(_, l)| *l);
        Error::Parse {
            path: self.source.clone(),
            line,
            msg: format!("{key}: {}", msg.into()),
        }
    }
}
