//! Resolved run settings.
//!
//! Every command starts from built-in defaults, applies its section of an
//! optional config file, then applies command-line flags. The file format is
//!
//! ```text
//! # comment
//! [train]
//! epochs = 20
//! arch = mlp
//! ```
//!
//! Sections are command names. Unknown sections and unknown keys are
//! errors. The resolved settings are written next to the outputs in the
//! same format and hashed into every output header.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const COMMANDS: [&str; 4] = ["train", "impute", "benchmark", "ablate"];

/// Keys that cannot change results (where outputs go, how many threads
/// run); they are left out of the hash so that such changes do not alter
/// the output files.
const UNHASHED_KEYS: [&str; 3] = ["out", "out_dir", "jobs"];

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    command: &'static str,
    entries: Vec<(&'static str, String)>,
}

impl Settings {
    pub fn new(command: &'static str, defaults: &[(&'static str, &str)]) -> Self {
        Self {
            command,
            entries: defaults.iter().map(|&(k, v)| (k, v.to_string())).collect(),
        }
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    fn slot(&mut self, key: &str) -> Option<&mut String> {
        self.entries.iter_mut().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Applies this command's section of a config file.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let at = || format!("{origin}:{}", i + 1);
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !COMMANDS.contains(&name) {
                    return Err(CliError::usage(format!("{}: unknown section [{name}]", at())));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{}: expected key = value", at())))?;
            let Some(sec) = &section else {
                return Err(CliError::usage(format!("{}: key outside of a [section]", at())));
            };
            if sec != self.command {
                continue;
            }
            let key = key.trim();
            match self.slot(key) {
                Some(v) => *v = value.trim().to_string(),
                None => return Err(CliError::usage(format!("{}: unknown key {key:?} in [{sec}]", at()))),
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Overrides `key`. Panics on a key that was not declared, which is a
    /// programming error rather than user input.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let command = self.command;
        *self
            .slot(key)
            .unwrap_or_else(|| panic!("undeclared key {key:?} for {command}")) = value.to_string();
    }

    pub fn set_opt<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.entries
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("undeclared key {key:?}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.raw(key);
        if v.is_empty() {
            return Err(CliError::usage(format!("{} needs a value for {key}", self.command)));
        }
        v.parse()
            .map_err(|_| CliError::usage(format!("bad value {v:?} for {key}")))
    }

    /// `None` when the value is empty.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list; empty gives an empty list.
    pub fn get_list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    /// The settings in config-file form.
    pub fn render(&self) -> String {
        let mut s = format!("[{}]\n", self.command);
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// First 12 hex digits of the SHA-256 of the rendered settings, without
    /// the keys that cannot change results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("[{}]\n", self.command));
        for (k, v) in self.entries.iter().filter(|(k, _)| !UNHASHED_KEYS.contains(k)) {
            h.update(format!("{k} = {v}\n"));
        }
        let digest = h.finalize();
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Header comment carried by every output file.
    pub fn header(&self, seed: u64) -> String {
        format!("tabimpute {} seed={seed} config={}", tabimpute::VERSION, self.hash())
    }
}
