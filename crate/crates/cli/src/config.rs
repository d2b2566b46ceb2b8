//! Settings precedence and file input.

use std::fs;
use std::path::Path;

use alw_core::SegConfig;
use serde_json::Value;

use crate::schema::{self, Schema};
use crate::{ConfigArgs, Failure};

pub fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{} is not valid JSON: {e}", path.display())))
}

/// Splits `key=value`.
pub fn key_value(kv: &str) -> Result<(&str, &str), Failure> {
    kv.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Failure::usage(format!("expected key=value, got `{kv}`")))
}

/// `value` as JSON when it parses as such, otherwise as a string.
pub fn loose_json(value: &str) -> Value {
    serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
}

/// Built-in defaults, then the config file, then `--model`/`--window`, then `--set`.
pub fn load(args: &ConfigArgs) -> Result<SegConfig, Failure> {
    let mut cfg = SegConfig::default();
    if let Some(path) = &args.config {
        let doc = read_json(path)?;
        schema::check(Schema::Config, &doc, &path.display().to_string())?;
        cfg = serde_json::from_value(doc).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(m) = &args.model {
        cfg.model = m.parse()?;
    }
    if let Some(w) = &args.window {
        cfg.window_mode = w.parse()?;
    }
    for kv in &args.set {
        let (k, v) = key_value(kv)?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
