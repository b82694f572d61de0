//! Flat `key=value` run configuration: flags override the file, and every
//! resolved value is recorded so it can be echoed next to the outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const ECHO_FILE: &str = "run_config.txt";

/// Normalises `batch_size`, `--batch-size` and `Batch-Size` to one key.
fn normalise_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('_', "-").to_ascii_lowercase()
}

/// Parses `key=value` lines; blank lines and `#` comments are ignored.
pub fn parse_config(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("{origin}:{}: expected `key=value`, found `{line}`", i + 1)))?;
        let key = normalise_key(k);
        if key.is_empty() {
            return Err(CliError::Input(format!("{origin}:{}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Input(format!("{origin}:{}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

/// Resolves each setting from its flag, then the config file, then a
/// default, keeping the resolved values in order of first use.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(command: &str, config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        Ok(Resolver {
            file,
            resolved: vec![("command".to_string(), command.to_string())],
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Input(format!("config key `{key}` = `{v}`: {e}"))),
        }
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.push((key.to_string(), value));
    }

    /// Records a derived value that has no flag of its own.
    pub fn record_value(&mut self, key: &str, value: String) {
        self.record(key, value);
    }

    /// Optional setting with no default.
    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = self.opt(key, flag)?;
        Ok(match v {
            Some(v) => v,
            None => {
                self.record(key, default.to_string());
                default
            }
        })
    }

    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        let v = flag || self.from_file::<bool>(key)?.unwrap_or(false);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        let v = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.record(key, p.display().to_string());
        }
        Ok(v)
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.path(key, flag)?
            .ok_or_else(|| CliError::Input(format!("missing required setting `--{key}` (flag or config key)")))
    }

    /// Repeatable setting; in the config file the values are
    /// comma-separated.
    pub fn list(&mut self, key: &str, flags: Vec<String>) -> Vec<String> {
        let v = if flags.is_empty() {
            self.file
                .get(key)
                .map(|s| s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
                .unwrap_or_default()
        } else {
            flags
        };
        if !v.is_empty() {
            self.record(key, v.join(","));
        }
        v
    }

    /// Config keys that no setting consumed; they are rejected so typos
    /// do not pass silently.
    pub fn check_unused(&self) -> Result<(), CliError> {
        let unused: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.resolved.iter().any(|(r, _)| r == *k))
            .map(String::as_str)
            .collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(CliError::Input(format!("unknown config keys: {}", unused.join(", "))))
        }
    }

    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_echo(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
        let p = dir.join(ECHO_FILE);
        fs::write(&p, self.echo()).map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalises_keys() {
        let m = parse_config("# comment\n\nbatch_size = 25\n--Max-Epochs=3\n", "t").unwrap();
        assert_eq!(m["batch-size"], "25");
        assert_eq!(m["max-epochs"], "3");
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        assert!(parse_config("batch-size 25", "t").is_err());
        assert!(parse_config("seed=1\nseed=2", "t").is_err());
        assert!(parse_config("=2", "t").is_err());
    }

    #[test]
    fn flag_overrides_file_overrides_default() {
        let mut r = Resolver {
            file: parse_config("seed=7\npatience=4", "t").unwrap(),
            resolved: vec![],
        };
        assert_eq!(r.get("seed", Some(9u64), 0).unwrap(), 9);
        assert_eq!(r.get("patience", None, 10usize).unwrap(), 4);
        assert_eq!(r.get("batch-size", None, 50usize).unwrap(), 50);
        assert_eq!(r.echo(), "seed=9\npatience=4\nbatch-size=50\n");
        r.check_unused().unwrap();
    }

    #[test]
    fn bad_file_value_and_unknown_key_are_input_errors() {
        let mut r = Resolver {
            file: parse_config("seed=abc\ntypo=1", "t").unwrap(),
            resolved: vec![],
        };
        assert!(matches!(r.get("seed", None, 0u64), Err(CliError::Input(_))));
        assert!(r.check_unused().is_err());
    }

    #[test]
    fn list_from_file_is_comma_separated() {
        let mut r = Resolver {
            file: parse_config("input=a, b,c", "t").unwrap(),
            resolved: vec![],
        };
        assert_eq!(r.list("input", vec![]), vec!["a", "b", "c"]);
        assert_eq!(r.list("input", vec!["x".into()]), vec!["x"]);
    }
}
