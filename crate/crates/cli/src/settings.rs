//! Resolved settings: command-line flags override config-file values, which
//! override built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Keys understood by [`dppmix::SamplerConfig::set`].
pub const SAMPLER_KEYS: [&str; 15] = [
    "w",
    "k",
    "eta",
    "beta",
    "minibatch",
    "leapfrog",
    "samples",
    "burn-in",
    "thinning",
    "seed",
    "alpha",
    "a0",
    "b0",
    "init-scale",
    "parallel",
];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Reads a flat `key=value` file. Blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), n + 1))?;
            values.insert(
                k.trim().trim_start_matches("--").to_owned(),
                v.trim().to_owned(),
            );
        }
        Ok(Settings { values })
    }

    pub fn load(config: Option<&Path>) -> Result<Self> {
        config.map_or_else(|| Ok(Settings::default()), Settings::from_file)
    }

    /// Applies flag values on top of the file.
    pub fn with_flags<'a>(
        mut self,
        flags: impl IntoIterator<Item = (&'a str, Option<String>)>,
    ) -> Self {
        for (k, v) in flags {
            if let Some(v) = v {
                self.values.insert(k.to_owned(), v);
            }
        }
        self
    }

    /// Rejects keys the command does not use, so typos do not pass silently.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.values.keys() {
            if !allowed.contains(&k.as_str()) {
                bail!("unknown setting `{k}`");
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| anyhow!("invalid value `{v}` for `{key}`"))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse()
                            .map_err(|_| anyhow!("invalid entry `{x}` in `{key}`"))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn sampler_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values
            .iter()
            .filter(|(k, _)| SAMPLER_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }
}
