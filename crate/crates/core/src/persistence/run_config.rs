use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Plain `key=value` run description. Keys are the long CLI flag names
/// without the leading dashes; `#` starts a comment line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("run config: bad value {key}={v:?}")))
            })
            .transpose()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        std::fs::read_to_string(path)?.parse()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("run config line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if cfg.entries.contains_key(k) {
                return Err(Error::Config(format!("run config line {}: duplicate key {k:?}", n + 1)));
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_display_roundtrip() {
        let text = "# comment\nregime = 1\nlayers=conv(4,3,1,1) relu | flatten dense(10)\nseed=7\n";
        let cfg: RunConfig = text.parse().unwrap();
        assert_eq!(cfg.get("regime"), Some("1"));
        assert_eq!(cfg.get_parsed::<u64>("seed").unwrap(), Some(7));
        let again: RunConfig = cfg.to_string().parse().unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn errors() {
        assert!("novalue".parse::<RunConfig>().is_err());
        assert!("a=1\na=2".parse::<RunConfig>().is_err());
        let cfg: RunConfig = "seed=x".parse().unwrap();
        assert!(cfg.get_parsed::<u64>("seed").is_err());
    }
}
