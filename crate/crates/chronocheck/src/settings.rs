//! Layered run settings: command-line flags over a key-value config file
//! over built-in defaults.
//!
//! The config file holds one `key = value` pair per line. Keys are the long
//! flag names without the leading dashes (`learning-rate = 1e-4`). Blank lines
//! and whole-line `#` comments are ignored.
//!
//! The seed is special: when neither a flag nor the file sets it, the
//! `CHRONOCHECK_SEED` environment variable replaces the built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CHRONOCHECK_SEED";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SettingsError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("{path}:{line}: key `{key}` appears twice")]
    Duplicate { path: PathBuf, line: usize, key: String },
    #[error("invalid value `{value}` for `{key}` (from {source_name}): {message}")]
    Value {
        key: String,
        value: String,
        source_name: &'static str,
        message: String,
    },
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Flag,
    File,
    Environment,
    Default,
}

impl Source {
    fn name(self) -> &'static str {
        match self {
            Source::Flag => "flag",
            Source::File => "config file",
            Source::Environment => "environment",
            Source::Default => "default",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    pub value: String,
    pub source: Source,
}

/// Parse a config file into its key-value pairs.
pub fn parse_config(text: &str, path: &Path) -> Result<BTreeMap<String, String>, SettingsError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(SettingsError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(SettingsError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            });
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(SettingsError::Duplicate {
                path: path.to_path_buf(),
                line: i + 1,
                key: k.to_string(),
            });
        }
    }
    Ok(out)
}

/// Resolves settings and records every value with its origin.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    env_seed: Option<String>,
    resolved: BTreeMap<String, Resolved>,
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>, env_seed: Option<String>) -> Self {
        Self {
            file,
            env_seed,
            resolved: BTreeMap::new(),
        }
    }

    /// Read the optional config file and the seed environment variable.
    pub fn load(config: Option<&Path>) -> Result<Self, SettingsError> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| SettingsError::File {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                parse_config(&text, p)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self::new(file, std::env::var(SEED_ENV).ok()))
    }

    fn parse<T: FromStr>(key: &str, value: &str, source: Source) -> Result<T, SettingsError>
    where
        T::Err: Display,
    {
        value.parse().map_err(|e: T::Err| SettingsError::Value {
            key: key.to_string(),
            value: value.to_string(),
            source_name: source.name(),
            message: e.to_string(),
        })
    }

    fn record(&mut self, key: &str, value: String, source: Source) {
        self.resolved.insert(key.to_string(), Resolved { value, source });
    }

    /// Flag, else file, else `default`.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, SettingsError>
    where
        T::Err: Display,
    {
        let (v, src) = match flag {
            Some(v) => (v, Source::Flag),
            None => match self.file.get(key) {
                Some(text) => (Self::parse(key, text, Source::File)?, Source::File),
                None => (default, Source::Default),
            },
        };
        self.record(key, v.to_string(), src);
        Ok(v)
    }

    /// As [`Settings::get`] without a default; unset values stay `None`.
    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, SettingsError>
    where
        T::Err: Display,
    {
        let (v, src) = match flag {
            Some(v) => (Some(v), Source::Flag),
            None => match self.file.get(key) {
                Some(text) => (Some(Self::parse(key, text, Source::File)?), Source::File),
                None => (None, Source::Default),
            },
        };
        if let Some(v) = &v {
            self.record(key, v.to_string(), src);
        }
        Ok(v)
    }

    /// A switch: a set flag wins, then the file (`true`/`false`), then off.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, SettingsError> {
        self.get(key, flag.then_some(true), false)
    }

    /// The seed: flag, file, `CHRONOCHECK_SEED`, then `default`.
    pub fn seed(&mut self, flag: Option<u64>, default: u64) -> Result<u64, SettingsError> {
        if flag.is_none() && !self.file.contains_key("seed") {
            if let Some(text) = self.env_seed.clone() {
                let v = Self::parse("seed", &text, Source::Environment)?;
                self.record("seed", text, Source::Environment);
                return Ok(v);
            }
        }
        self.get("seed", flag, default)
    }

    /// Fail on config keys that no setting consumed.
    pub fn finish(&self) -> Result<(), SettingsError> {
        let unknown: Vec<String> = self.file.keys().filter(|k| !self.resolved.contains_key(*k)).cloned().collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(SettingsError::UnknownKeys(unknown))
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, Resolved> {
        &self.resolved
    }

    /// One `key = value  (source)` line per setting, sorted by key.
    pub fn summary(&self) -> String {
        self.resolved.iter().map(|(k, r)| format!("{k} = {}  ({})\n", r.value, r.source.name())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> BTreeMap<String, String> {
        parse_config(text, Path::new("run.cfg")).unwrap()
    }

    #[test]
    fn precedence_is_flag_file_default() {
        let mut s = Settings::new(file("# comment\nepochs = 12\n\nlearning-rate=0.5\n"), None);
        assert_eq!(s.get("epochs", Some(3usize), 30).unwrap(), 3);
        assert_eq!(s.get("learning-rate", None, 1e-4).unwrap(), 0.5);
        assert_eq!(s.get("batch-size", None, 32usize).unwrap(), 32);
        assert_eq!(s.resolved()["epochs"].source, Source::Flag);
        assert_eq!(s.resolved()["learning-rate"].source, Source::File);
        assert_eq!(s.resolved()["batch-size"].source, Source::Default);
        assert!(s.summary().contains("learning-rate = 0.5  (config file)"));
        s.finish().unwrap();
    }

    #[test]
    fn seed_environment_sits_above_default_only() {
        let mut s = Settings::new(BTreeMap::new(), Some("99".into()));
        assert_eq!(s.seed(None, 7).unwrap(), 99);
        assert_eq!(s.resolved()["seed"].source, Source::Environment);
        let mut s = Settings::new(BTreeMap::new(), Some("99".into()));
        assert_eq!(s.seed(Some(1), 7).unwrap(), 1);
        let mut s = Settings::new(file("seed = 5"), Some("99".into()));
        assert_eq!(s.seed(None, 7).unwrap(), 5);
        let mut s = Settings::new(BTreeMap::new(), Some("x".into()));
        assert!(matches!(s.seed(None, 7), Err(SettingsError::Value { source_name: "environment", .. })));
    }

    #[test]
    fn file_errors() {
        let p = Path::new("run.cfg");
        assert_eq!(parse_config("epochs 3", p), Err(SettingsError::Syntax { path: p.into(), line: 1 }));
        assert!(matches!(parse_config("a=1\na=2", p), Err(SettingsError::Duplicate { line: 2, .. })));
        let mut s = Settings::new(file("epochs = many\ntypo = 1"), None);
        assert!(matches!(s.get("epochs", None, 1usize), Err(SettingsError::Value { .. })));
        assert_eq!(s.finish(), Err(SettingsError::UnknownKeys(vec!["epochs".into(), "typo".into()])));
        let mut s = Settings::new(file("ta = true"), None);
        assert!(s.switch("ta", false).unwrap());
        assert!(!s.switch("augment-locations", false).unwrap());
    }
}
