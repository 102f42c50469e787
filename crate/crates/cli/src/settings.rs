//! Layered option resolution: command-line flags over the settings file
//! over built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// A problem with how the tool was invoked. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Settings file: top-level `seed` plus one object per subcommand.
#[derive(Debug, Default, Clone)]
pub struct Settings {
    root: Map<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
            Value::Object(root) => Ok(Settings { root }),
            _ => Err(usage(format!("{} must hold a JSON object", path.display()))),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.root.get("seed").and_then(Value::as_u64)
    }

    pub fn section(&self, command: &str) -> Option<&Value> {
        self.root.get(command)
    }
}

fn overlay(base: &mut Map<String, Value>, top: &Value) {
    if let Value::Object(map) = top {
        for (k, v) in map {
            if !v.is_null() {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Merges `defaults`, the command's settings section and the explicit flags,
/// later layers winning, and returns the resolved arguments.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    settings: &Settings,
    command: &str,
    defaults: Value,
) -> anyhow::Result<T> {
    let mut merged = Map::new();
    overlay(&mut merged, &defaults);
    if let Some(section) = settings.section(command) {
        if !section.is_object() {
            return Err(usage(format!("settings entry `{command}` must be an object")));
        }
        overlay(&mut merged, section);
    }
    overlay(&mut merged, &serde_json::to_value(flags)?);
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| usage(format!("invalid `{command}` settings: {e}")))
}

/// The value of a required option after resolution.
pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value
        .clone()
        .ok_or_else(|| usage(format!("missing required option --{flag}")))
}
