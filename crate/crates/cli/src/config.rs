//! Flat `key = value` run configuration.
//!
//! Values come from an optional file and from command-line flags, flags
//! winning. Every lookup records the value actually used, so the output
//! header can list the fully resolved configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Every key the commands understand.
pub const KNOWN_KEYS: &[&str] = &[
    "epsilon",
    "v_char",
    "dist",
    "init",
    "t_end",
    "m_factor",
    "dt",
    "dt_fine",
    "dt0",
    "rmse",
    "strategy",
    "bias_rule",
    "max_levels",
    "initial_samples",
    "qoi",
    "samples",
    "seed",
    "out_path",
    "trace",
    "coupled",
    "level_min",
    "level_max",
    "k_x",
    "k_v",
    "epsilons",
    "tail_ratio",
    "tail_points",
    "eps_min",
    "eps_max",
    "eps_count",
    "t_min",
    "t_max",
    "t_count",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    raw: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl RunConfig {
    /// Parses the file format: one `key = value` per line, `#` starts a
    /// comment, blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = RunConfig::default();
        for (number, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: number + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets a raw value, overriding any earlier one.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.replace('-', "_");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::invalid(&key, "unknown configuration key"));
        }
        self.raw.insert(key, value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(String::as_str)
    }

    /// Typed lookup with a default; the resolved value is recorded.
    pub fn get<T>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match self.raw.get(key) {
            Some(text) => text
                .parse::<T>()
                .map_err(|e| CliError::invalid(key, format!("cannot parse `{text}`: {e}")))?,
            None => default,
        };
        self.record(key, &value);
        Ok(value)
    }

    /// Comma-separated list lookup.
    pub fn get_list<T>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let values = match self.raw.get(key) {
            Some(text) => text
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse::<T>()
                        .map_err(|e| CliError::invalid(key, format!("cannot parse `{item}`: {e}")))
                })
                .collect::<Result<Vec<T>, _>>()?,
            None => default.to_vec(),
        };
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.record(key, &joined.join(","));
        Ok(values)
    }

    pub fn get_bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        let value = match self.raw.get(key).map(|s| s.to_ascii_lowercase()) {
            None => default,
            Some(s) if matches!(s.as_str(), "true" | "1" | "yes") => true,
            Some(s) if matches!(s.as_str(), "false" | "0" | "no") => false,
            Some(s) => return Err(CliError::invalid(key, format!("expected true or false, got `{s}`"))),
        };
        self.record(key, &value);
        Ok(value)
    }

    fn record(&mut self, key: &str, value: &dyn Display) {
        let value = value.to_string();
        match self.resolved.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.resolved.push((key.to_string(), value)),
        }
    }

    /// The values used so far, in lookup order.
    pub fn resolved(&self) -> &[(String, String)] {
        &self.resolved
    }
}
