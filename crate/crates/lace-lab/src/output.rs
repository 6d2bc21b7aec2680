//! Output files. Every artifact carries the schema version, the config hash
//! and the effective config; files are written as `name.partial` and renamed
//! once their stage succeeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const PARTIAL_SUFFIX: &str = ".partial";

/// Formats a float for CSV: shortest round-trip form, empty for NaN.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Comment block placed at the top of every CSV.
pub fn csv_preamble(cfg: &ExperimentConfig) -> String {
    let mut s = format!("# lace-lab schema_version={SCHEMA_VERSION}\n# config_hash={}\n", cfg.hash());
    for line in cfg.effective_toml().lines() {
        if line.is_empty() {
            s.push_str("#\n");
        } else {
            let _ = writeln!(s, "# {line}");
        }
    }
    s
}

/// Header comment and data lines of a CSV written by this crate.
pub struct CsvFile {
    pub config_hash: String,
    pub config_toml: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv(path: &Path) -> Result<CsvFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.starts_with("# lace-lab schema_version=") => {
            let v: u32 = l["# lace-lab schema_version=".len()..].parse()?;
            if v != SCHEMA_VERSION {
                bail!("{}: schema_version {v}, expected {SCHEMA_VERSION}", path.display());
            }
        }
        _ => bail!("{}: not a lace-lab CSV", path.display()),
    }
    let config_hash = lines
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .with_context(|| format!("{}: missing config_hash", path.display()))?
        .to_string();
    let mut config_toml = String::new();
    let mut header = None;
    let mut rows = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_none() {
                config_toml.push_str(rest.strip_prefix(' ').unwrap_or(rest));
                config_toml.push('\n');
            }
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    let header = header.with_context(|| format!("{}: no header row", path.display()))?;
    Ok(CsvFile { config_hash, config_toml, header, rows })
}

impl CsvFile {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).with_context(|| format!("no column {name}"))
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::parse(&self.config_toml)?;
        if cfg.hash() != self.config_hash {
            bail!("embedded config does not match its hash");
        }
        Ok(cfg)
    }
}

/// Wraps a JSON payload with the schema version and config.
pub fn json_document<T: Serialize>(cfg: &ExperimentConfig, kind: &str, payload: &T) -> Result<Value> {
    let mut v = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config_hash": cfg.hash(),
        "config_toml": cfg.effective_toml(),
    });
    let body = serde_json::to_value(payload)?;
    match body {
        Value::Object(map) => {
            for (k, x) in map {
                v[k] = x;
            }
        }
        other => v["data"] = other,
    }
    Ok(v)
}

/// Writes one stage's files as partials and renames them on commit.
pub struct StageWriter<'a> {
    dir: PathBuf,
    cfg: &'a ExperimentConfig,
    written: Vec<String>,
}

impl<'a> StageWriter<'a> {
    pub fn new(dir: &Path, cfg: &'a ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), cfg, written: Vec::new() })
    }

    fn put(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(format!("{name}{PARTIAL_SUFFIX}"));
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut s = csv_preamble(self.cfg);
        s.push_str(&header.join(","));
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.put(name, &s)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, payload: &T) -> Result<()> {
        let doc = json_document(self.cfg, kind, payload)?;
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        self.put(name, &s)
    }

    /// Renames every partial to its final name and returns the names.
    pub fn commit(self) -> Result<Vec<String>> {
        for name in &self.written {
            let from = self.dir.join(format!("{name}{PARTIAL_SUFFIX}"));
            let to = self.dir.join(name);
            fs::rename(&from, &to).with_context(|| format!("renaming {}", from.display()))?;
        }
        Ok(self.written)
    }

    /// Names of the partial files written so far.
    pub fn partials(&self) -> Vec<String> {
        self.written.iter().map(|n| format!("{n}{PARTIAL_SUFFIX}")).collect()
    }
}
