//! `key = value` run configuration. Command-line flags override file values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("config line {}: expected key = value", i + 1))
            })?;
            let key = k.trim().replace('-', "_");
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Validation(format!(
                    "config line {}: duplicate key {key}",
                    i + 1
                )));
            }
        }
        Ok(Self { values })
    }

    /// Rejects keys that the running command does not understand.
    pub fn check_keys(&self, known: &[&str]) -> Result<(), CliError> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(CliError::Validation(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    /// Flag value if given, else the parsed config value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Validation(format!("config {key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}

pub fn parse_list<T>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse::<T>()
                .map_err(|e| CliError::Validation(format!("{what} {x:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let cfg = ConfigFile::parse("seed = 7\n# comment\nfolds=3  # trailing\n").unwrap();
        assert_eq!(cfg.pick::<u64>(None, "seed").unwrap(), Some(7));
        assert_eq!(cfg.pick(Some(9u64), "seed").unwrap(), Some(9));
        assert_eq!(cfg.pick::<usize>(None, "folds").unwrap(), Some(3));
        assert_eq!(cfg.pick::<usize>(None, "absent").unwrap(), None);
        assert!(cfg.check_keys(&["seed", "folds"]).is_ok());
        assert!(cfg.check_keys(&["seed"]).is_err());
    }

    #[test]
    fn malformed_config() {
        assert!(ConfigFile::parse("seed 7").is_err());
        assert!(ConfigFile::parse("seed = 1\nseed = 2").is_err());
        let cfg = ConfigFile::parse("seed = x").unwrap();
        assert!(cfg.pick::<u64>(None, "seed").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("1, 3,5", "k").unwrap(), vec![1, 3, 5]);
        assert!(parse_list::<usize>("1,a", "k").is_err());
    }
}
