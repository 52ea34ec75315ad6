//! Config files: either a JSON object or `key = value` lines.
//!
//! In key-value form each value is read as a JSON literal when it parses as
//! one (`3`, `true`, `["a", "b"]`) and as a bare string otherwise.

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Malformed(usize),
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("config must be a JSON object")]
    NotAnObject,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn parse_kv(text: &str) -> Result<Map<String, Value>, ConfigError> {
    let mut map = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Malformed(i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Malformed(i + 1));
        }
        if map.insert(k.to_string(), parse_value(v.trim())).is_some() {
            return Err(ConfigError::Duplicate {
                line: i + 1,
                key: k.to_string(),
            });
        }
    }
    Ok(map)
}

/// Reads either format; text starting with `{` is treated as JSON.
pub fn parse_map(text: &str) -> Result<Map<String, Value>, ConfigError> {
    if text.trim_start().starts_with('{') {
        match serde_json::from_str(text)? {
            Value::Object(m) => Ok(m),
            _ => Err(ConfigError::NotAnObject),
        }
    } else {
        parse_kv(text)
    }
}

pub fn from_map<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, ConfigError> {
    Ok(serde_json::from_value(Value::Object(map))?)
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    from_map(parse_map(text)?)
}
