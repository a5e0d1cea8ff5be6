//! Plain-text `key = value` configuration.
//!
//! Blank lines and anything after `#` are ignored. Keys may repeat only
//! once; values are trimmed. Readers `take` the keys they understand and
//! `finish` rejects whatever is left over.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot use {value:?}: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("unknown key(s): {0}")]
    Unknown(String),
}

impl ConfigError {
    pub fn invalid(key: &str, value: impl Into<String>, reason: impl Display) -> Self {
        ConfigError::Invalid { key: key.to_string(), value: value.into(), reason: reason.to_string() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: key.to_string() });
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Moves every key starting with `prefix` into a new config.
    pub fn split_prefix(&mut self, prefix: &str) -> KvConfig {
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        let entries = keys.into_iter().filter_map(|k| self.entries.remove_entry(&k)).collect();
        KvConfig { entries }
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn require_str(&mut self, key: &str) -> Result<String, ConfigError> {
        self.take_str(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| ConfigError::invalid(key, v, e)),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.take(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Like [`KvConfig::take_or`], where `none` or `off` disables the setting.
    pub fn take_optional<T>(&mut self, key: &str, default: Option<T>) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) if v == "none" || v == "off" => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| ConfigError::invalid(key, v, e)),
        }
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(v) = self.entries.remove(key) else { return Ok(None) };
        parse_list(&v).map(Some).map_err(|e| ConfigError::invalid(key, v.clone(), e))
    }

    /// Errors when unconsumed keys remain.
    pub fn finish(self) -> Result<(), ConfigError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(self.entries.keys().cloned().collect::<Vec<_>>().join(", ")))
        }
    }

    /// Canonical text: sorted keys, one per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_list<T>(v: &str) -> Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

pub fn join_list<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
