use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::{usage, CliError, RunManifest};
use crate::error::Error;

const COMMANDS: [&str; 10] =
    ["ingest", "stats", "train", "train-head", "eval", "tune", "infer", "mask-preview", "simulate", "compare"];

/// Resolved settings of one run. Keys are the long flag names.
///
/// A TOML config may set keys at top level (shared by all commands) or in a
/// table named after the command. A JSON run manifest replays its `config`.
#[derive(Debug, Default)]
pub struct Settings {
    shared: Map<String, Value>,
    own: Map<String, Value>,
    used: BTreeSet<String>,
    resolved: Map<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>, command: &str) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest = RunManifest::read(path)?;
            if manifest.command != command {
                return Err(usage(format!("{} records a '{}' run, not '{command}'", path.display(), manifest.command)));
            }
            return Ok(Settings { own: manifest.config, ..Settings::default() });
        }
        let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut settings = Settings::default();
        for (key, value) in table {
            let value = serde_json::to_value(value).map_err(Error::from)?;
            if key == command {
                match value {
                    Value::Object(m) => settings.own = m,
                    _ => return Err(usage(format!("{}: [{command}] must be a table", path.display()))),
                }
            } else if !COMMANDS.contains(&key.as_str()) {
                settings.shared.insert(key, value);
            }
        }
        Ok(settings)
    }

    fn lookup<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        self.used.insert(key.to_string());
        let raw = self.own.get(key).or_else(|| self.shared.get(key));
        match raw {
            None | Some(Value::Null) => Ok(None),
            Some(v) => {
                serde_json::from_value(v.clone()).map(Some).map_err(|e| usage(format!("config key '{key}': {e}")))
            }
        }
    }

    pub fn record_value<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.resolved.insert(key.to_string(), v);
    }

    /// Flag, else config, else `default`.
    pub fn pick<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        let from_file = self.lookup(key)?;
        let v = flag.or(from_file).unwrap_or(default);
        self.record_value(key, &v);
        Ok(v)
    }

    pub fn pick_opt<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError> {
        let from_file = self.lookup(key)?;
        let v = flag.or(from_file);
        self.record_value(key, &v);
        Ok(v)
    }

    /// Boolean switch: on if the flag is given, else the config value.
    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.pick(key, flag.then_some(true), false)
    }

    /// Fails on keys in the command's own table that nothing asked for.
    /// Call after every key has been picked.
    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&String> =
            self.own.keys().filter(|k| !self.used.contains(*k) && !self.resolved.contains_key(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("unknown config key(s): {unknown:?}")))
        }
    }

    pub fn resolved(&self) -> &Map<String, Value> {
        &self.resolved
    }
}
