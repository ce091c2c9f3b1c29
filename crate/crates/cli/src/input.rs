//! Config files, field overrides and trace arguments.

use std::path::Path;

use cachesel::config::SystemConfig;
use cachesel::trace::TraceSource;
use serde_json::Value;

use crate::CliError;

/// Reads a TOML config, or a `report.json` from an earlier run. A report
/// also yields the trace it was run on.
pub fn load_config(path: &Path) -> Result<(SystemConfig, Option<TraceSource>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if !is_json {
        let config = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return Ok((config, None));
    }
    let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut value: Value = serde_json::from_str(&text).map_err(bad)?;
    match value.get_mut("config").map(Value::take) {
        Some(config) => {
            let trace = match value.get_mut("trace").map(Value::take) {
                None | Some(Value::Null) => None,
                Some(t) => Some(serde_json::from_value(t).map_err(bad)?),
            };
            Ok((serde_json::from_value(config).map_err(bad)?, trace))
        }
        None => Ok((serde_json::from_value(value).map_err(bad)?, None)),
    }
}

/// Parses `key=value`.
pub fn parse_assignment(spec: &str) -> Result<(&str, &str), CliError> {
    spec.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| CliError::Config(format!("expected key=value, got `{spec}`")))
}

/// A JSON literal if `raw` parses as one, otherwise a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Returns `config` with field `key` set to `raw`.
pub fn apply_override(config: &SystemConfig, key: &str, raw: &str) -> Result<SystemConfig, CliError> {
    let mut value = serde_json::to_value(config).expect("config serializes");
    value
        .as_object_mut()
        .expect("config is an object")
        .insert(key.to_string(), parse_value(raw));
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{key}={raw}: {e}")))
}

/// Splits a value list on commas outside brackets, so `[1,2],[3,4]` is two values.
pub fn split_values(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in list.chars() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur.trim().to_string());
    out
}

/// Parses `universe,exponent,length,seed`.
pub fn parse_zipf(spec: &str) -> Result<TraceSource, CliError> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let bad = || CliError::Config(format!("--zipf expects universe,exponent,length,seed, got `{spec}`"));
    if parts.len() != 4 {
        return Err(bad());
    }
    Ok(TraceSource::Zipf {
        universe: parts[0].parse().map_err(|_| bad())?,
        exponent: parts[1].parse().map_err(|_| bad())?,
        length: parts[2].parse().map_err(|_| bad())?,
        seed: parts[3].parse().map_err(|_| bad())?,
    })
}
