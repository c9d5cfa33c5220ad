//! Resolved key=value run settings: built-in defaults, overridden by an
//! optional config file, overridden by command-line flags.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pcrk_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct Settings {
    entries: Vec<(&'static str, String)>,
}

impl Settings {
    pub fn new(defaults: &[(&'static str, &str)]) -> Self {
        Settings { entries: defaults.iter().map(|(k, v)| (*k, v.to_string())).collect() }
    }

    fn slot(&mut self, key: &str) -> Option<&mut String> {
        self.entries.iter_mut().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped
    /// and unknown keys are errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("{origin}:{}: expected key=value", i + 1)))?;
            let key = key.trim();
            match self.slot(key) {
                Some(v) => *v = value.trim().to_string(),
                None => return Err(Error::InvalidArgument(format!("{origin}:{}: unknown config key '{key}'", i + 1))),
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: Option<&Path>) -> Result<()> {
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            self.apply_text(&text, &path.display().to_string())?;
        }
        Ok(())
    }

    /// Overrides `key` when the flag was given.
    pub fn flag<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            *self.slot(key).unwrap_or_else(|| panic!("undeclared setting {key}")) = v.to_string();
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.entries
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("undeclared setting {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| Error::InvalidArgument(format!("{key}={raw}: {e}")))
    }

    /// `None` for an empty value.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    /// `None` for an empty value or `auto`.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            "" | "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("run_config.txt"), self.render())?;
        Ok(())
    }
}
