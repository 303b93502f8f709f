//! `key = value` configuration files.
//!
//! Keys are long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are ignored. Flags given on the command line
//! take precedence over file values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct FileValues {
    path: Option<PathBuf>,
    values: BTreeMap<String, (usize, String)>,
}

impl FileValues {
    /// Parses `path`, rejecting keys outside `allowed`.
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::flag(format!("--config {}: {e}", path.display())))?;
        Self::parse(path, &text, allowed)
    }

    fn parse(path: &Path, text: &str, allowed: &[&str]) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("{}:{}", path.display(), i + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::flag(format!("{}: expected key = value", at())))?;
            let key = key.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::flag(format!(
                    "{}: unknown key '{key}' (allowed: {})",
                    at(),
                    allowed.join(", ")
                )));
            }
            if values
                .insert(key.clone(), (i + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(CliError::flag(format!("{}: duplicate key '{key}'", at())));
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            values,
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let Some((line, raw)) = self.values.get(key) else {
            return Ok(None);
        };
        raw.parse().map(Some).map_err(|e| {
            let path = self.path.as_deref().unwrap_or(Path::new("")).display();
            CliError::flag(format!(
                "{path}:{line}: invalid value '{raw}' for '{key}': {e}"
            ))
        })
    }

    /// Command-line value, else file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Like [`pick`](Self::pick) without a default.
    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self
                .get(key)?
                .ok_or_else(|| CliError::flag(format!("missing required --{key}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<FileValues> {
        FileValues::parse(Path::new("run.cfg"), text, &["seed", "epochs"])
    }

    #[test]
    fn reads_values_and_comments() {
        let f = parse("# run\nseed = 4\n\nepochs=3\n").unwrap();
        assert_eq!(f.get::<u64>("seed").unwrap(), Some(4));
        assert_eq!(f.pick(Some(9usize), "epochs", 1).unwrap(), 9);
        assert_eq!(f.pick(None, "epochs", 1usize).unwrap(), 3);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for text in ["colour = red\n", "seed = 1\nseed = 2\n", "seed\n"] {
            assert_eq!(parse(text).unwrap_err().code, 2, "{text:?}");
        }
        let f = parse("seed = x\n").unwrap();
        let err = f.get::<u64>("seed").unwrap_err();
        assert!(err.message.contains("run.cfg:1"), "{}", err.message);
    }
}
