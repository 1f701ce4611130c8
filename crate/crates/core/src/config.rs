//! Scenario files: JSON documents carrying a [`ScenarioConfig`].

use std::path::Path;

use serde_json::Value;

use crate::sim::ScenarioConfig;
use crate::{Error, Result};

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_json(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("scenario serializes")
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Parse {
            input: s.to_string(),
            reason: "expected key=value".into(),
        }),
    }
}

/// Sets the dotted `key` in `doc` to `raw`, read as JSON when it parses and
/// as a string otherwise. Intermediate objects are created as needed.
pub fn set_path(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_string(), value);
                    return Ok(());
                }
                map.entry((*part).to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::Parse {
                    input: key.to_string(),
                    reason: format!("`{part}` is not an array index"),
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| Error::Parse {
                    input: key.to_string(),
                    reason: format!("index {idx} out of range (len {len})"),
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Parse {
                    input: key.to_string(),
                    reason: format!("`{part}` is not inside an object or array"),
                })
            }
        };
    }
    Ok(())
}

/// Applies `key=value` overrides and re-validates.
pub fn apply_overrides(cfg: &ScenarioConfig, overrides: &[(String, String)]) -> Result<ScenarioConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let mut doc = serde_json::to_value(cfg)?;
    for (k, v) in overrides {
        set_path(&mut doc, k, v)?;
    }
    let out: ScenarioConfig = serde_json::from_value(doc)?;
    out.validate()?;
    Ok(out)
}
