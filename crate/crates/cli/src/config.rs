//! Flat key-value configuration with one section per subcommand.
//!
//! ```toml
//! seed = 7
//! out = "runs/a"
//!
//! [energy]
//! trials = 500
//! alpha = 0.3
//! ```
//!
//! Command-line flags win over file values, which win over defaults. Every
//! resolved value is recorded; the sorted record is hashed into the tag that
//! ends every CSV row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

/// Top-level keys that are not subcommand parameters.
pub const GLOBAL_KEYS: [&str; 4] = ["seed", "out", "strict", "threads"];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    globals: toml::Table,
    sections: BTreeMap<String, toml::Table>,
}

fn scalar_text(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(a) => a.iter().map(scalar_text).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
        _ => None,
    }
}

impl ConfigFile {
    pub fn parse(text: &str, commands: &[&str]) -> Result<Self> {
        let table: toml::Table = text.parse().context("config file is not valid key-value text")?;
        let mut cfg = ConfigFile::default();
        for (k, v) in table {
            match v {
                toml::Value::Table(t) => {
                    if !commands.contains(&k.as_str()) {
                        bail!("config section [{k}] names no subcommand");
                    }
                    cfg.sections.insert(k, t);
                }
                other => {
                    if !GLOBAL_KEYS.contains(&k.as_str()) {
                        bail!("unknown top-level config key {k:?}");
                    }
                    cfg.globals.insert(k, other);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, commands: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, commands)
    }

    pub fn global(&self, key: &str) -> Option<String> {
        self.globals.get(key).and_then(scalar_text)
    }
}

/// Parameter resolution for one subcommand.
#[derive(Debug)]
pub struct Params {
    command: String,
    section: toml::Table,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Params {
    pub fn new(command: &str, file: &ConfigFile) -> Self {
        Params {
            command: command.to_string(),
            section: file.sections.get(command).cloned().unwrap_or_default(),
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        }
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let Some(v) = self.section.get(key) else { return Ok(None) };
        let text = scalar_text(v).ok_or_else(|| anyhow!("config key {}.{key} must be a scalar or a list", self.command))?;
        text.parse::<T>().map(Some).map_err(|e| anyhow!("config key {}.{key}: cannot parse {text:?}: {e}", self.command))
    }

    /// Flag, else file, else `default`.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let file = self.from_file(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`get`](Self::get) without a default; absent values stay `None`.
    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let file = self.from_file(key)?;
        let v = flag.or(file);
        self.resolved.insert(key.to_string(), v.as_ref().map_or_else(|| "-".to_string(), |x| x.to_string()));
        Ok(v)
    }

    /// Comma-separated list.
    pub fn get_list(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<Vec<f64>> {
        let raw: String = self.get(key, flag, default.to_string())?;
        raw.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| anyhow!("{}.{key}: cannot parse {s:?}: {e}", self.command)))
            .collect()
    }

    /// Rejects file keys no parameter asked for, then hashes the record.
    pub fn finish(&self, seed: u64) -> Result<String> {
        let unknown: Vec<&String> = self.section.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys in [{}]: {unknown:?}", self.command);
        }
        Ok(config_hash(&self.command, seed, &self.resolved))
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

/// First 16 hex digits of SHA-256 over `command`, `seed` and the sorted
/// `key=value` lines.
pub fn config_hash(command: &str, seed: u64, values: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(format!("{command}\nseed={seed}\n"));
    for (k, v) in values {
        h.update(format!("{k}={v}\n"));
    }
    hex::encode(&h.finalize()[..8])
}

/// Global options after merging flags and the file.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    pub out: PathBuf,
    pub strict: bool,
    pub threads: Option<usize>,
}

impl Globals {
    pub fn resolve(file: &ConfigFile, seed: Option<u64>, out: Option<PathBuf>, strict: bool, threads: Option<usize>) -> Result<Self> {
        let parse = |key: &str| -> Result<Option<String>> { Ok(file.global(key)) };
        let seed = match seed {
            Some(s) => s,
            None => parse("seed")?.map(|s| s.parse::<u64>().with_context(|| format!("seed {s:?} is not a u64"))).transpose()?.unwrap_or(0),
        };
        let out = out.or_else(|| file.global("out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
        let strict = strict || parse("strict")?.map(|s| s.parse::<bool>().with_context(|| format!("strict {s:?} is not a bool"))).transpose()?.unwrap_or(false);
        let threads = match threads {
            Some(t) => Some(t),
            None => parse("threads")?.map(|s| s.parse::<usize>().with_context(|| format!("threads {s:?} is not a count"))).transpose()?,
        };
        Ok(Globals { seed, out, strict, threads })
    }
}
