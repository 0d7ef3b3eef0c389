//! Flat `key = value` configuration files and flag/file/default resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Default)]
pub struct ConfigFile {
    path: PathBuf,
    /// key → (value, line)
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Blank lines and `#` comments are skipped; keys accept `_` or `-`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Invalid(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    i + 1
                )));
            };
            let key = key.trim().replace('_', "-");
            if key.is_empty() {
                return Err(CliError::Invalid(format!("{}:{}: empty key", path.display(), i + 1)));
            }
            if entries.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(CliError::Invalid(format!(
                    "{}:{}: duplicate key `{key}`",
                    path.display(),
                    i + 1
                )));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }
}

/// Resolves each setting as flag, else config file, else default. Every
/// file key must be consumed by the running subcommand.
#[derive(Debug, Default)]
pub struct Resolver {
    file: ConfigFile,
    used: BTreeSet<String>,
}

impl Resolver {
    pub fn new(file: Option<ConfigFile>) -> Self {
        Self {
            file: file.unwrap_or_default(),
            used: BTreeSet::new(),
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.entries.get(key) {
            None => Ok(None),
            Some((value, line)) => value.parse::<T>().map(Some).map_err(|e| {
                CliError::Invalid(format!("{}:{line}: bad value for `{key}`: {e}", self.file.path.display()))
            }),
        }
    }

    pub fn or<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key, flag)?
            .ok_or_else(|| CliError::Invalid(format!("missing required setting `--{key}`")))
    }

    /// Rejects config keys the subcommand never asked for.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<String> = self
            .file
            .entries
            .iter()
            .filter(|(k, _)| !self.used.contains(*k))
            .map(|(k, (_, line))| format!("`{k}` (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(format!(
                "unknown key(s) in {}: {}",
                self.file.path.display(),
                unknown.join(", ")
            )))
        }
    }
}
