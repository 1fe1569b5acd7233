//! Defaults from a `--config` JSON file.
//!
//! Keys are flag names without the leading dashes (`window`, `N`,
//! `reset-on-doc`, ...). A key at the top level applies to every command; an
//! object named after a command overrides it for that command only:
//!
//! ```json
//! { "discount": "gt", "eval": { "window": 500 }, "sweep": { "windows": [200, 500] } }
//! ```
//!
//! Command-line flags always win over the file.

use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default)]
pub struct Config {
    global: Map<String, Value>,
    section: Map<String, Value>,
}

impl Config {
    pub fn load(path: Option<&Path>, command: &str) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, command).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, command: &str) -> Result<Self> {
        let Value::Object(mut global) = serde_json::from_str(text)? else {
            bail!("config must be a JSON object");
        };
        let section = match global.remove(command) {
            Some(Value::Object(m)) => m,
            Some(_) => bail!("config section `{command}` must be an object"),
            None => Map::new(),
        };
        Ok(Self { global, section })
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        self.section.get(key).or_else(|| self.global.get(key))
    }

    /// Scalar setting as text, for parsing with `FromStr`.
    fn text(&self, key: &str) -> Result<Option<String>> {
        match self.raw(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(Value::Bool(b)) => Ok(Some(b.to_string())),
            Some(other) => Err(anyhow!("config key `{key}` must be a scalar, got {other}")),
        }
    }

    /// The flag value if given, else the config value, else `None`.
    pub fn get<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.text(key)?
            .map(|s| s.parse::<T>().map_err(|e| anyhow!("config key `{key}`: {e}")))
            .transpose()
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    /// Boolean switch: on if the flag was passed or the config says so.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.get::<bool>(None, key)?.unwrap_or(false))
    }

    /// A list of positive integers, from a comma-separated flag or a JSON
    /// array / comma-separated string in the config.
    pub fn list(&self, flag: Option<&str>, key: &str) -> Result<Option<Vec<usize>>> {
        if let Some(s) = flag {
            return parse_list(s).map(Some);
        }
        match self.raw(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => parse_list(s).map(Some),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .map(|x| x as usize)
                        .ok_or_else(|| anyhow!("config key `{key}` must hold integers, got {v}"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(anyhow!("config key `{key}` must be a list, got {other}")),
        }
    }
}

pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().with_context(|| format!("`{t}` is not a window length")))
        .collect()
}
