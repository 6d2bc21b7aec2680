//! Runs the configured stages in dependency order and records a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Stage};
use crate::output::{sha256_hex, StageWriter, SCHEMA_VERSION};
use crate::stages::{run_analysis, run_diagrams, run_mc, run_oracle, run_powercount, McProducts, StageContext};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Error => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: Status,
    /// Files relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Partial files left behind by a failed stage.
    pub partial: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub toolkit: String,
    pub config_hash: String,
    pub config_toml: String,
    pub seed: u64,
    pub workers: usize,
    pub started: String,
    pub finished: String,
    pub status: Status,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(m)
    }

    pub fn hash_matches(&self) -> bool {
        sha256_hex(&self.config_toml) == self.config_hash
    }

    pub fn failed_stage(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.status == Status::Error)
    }
}

pub fn toolkit_version() -> String {
    format!("lace-lab {}", env!("CARGO_PKG_VERSION"))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Runs every configured stage into `out` and writes `manifest.json` there.
/// A stage error stops the run; its partial files stay on disk.
pub fn run(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<RunManifest> {
    let started = now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = StageContext { cfg, base: base.to_path_buf() };
    let mut records = Vec::new();
    let mut mc: Option<McProducts> = None;
    let mut status = Status::Pass;
    for stage in cfg.ordered_stages() {
        let mut w = StageWriter::new(out, cfg)?;
        let result = match stage {
            Stage::Oracle => run_oracle(&ctx, &mut w),
            Stage::Powercount => run_powercount(&ctx, &mut w),
            Stage::Mc => run_mc(&ctx, &mut w).map(|m| {
                mc = Some(m);
                true
            }),
            Stage::Diagrams => {
                let p = mc.as_ref().map_or(cfg.model.p, |m| m.p);
                run_diagrams(&ctx, &mut w, p)
            }
            Stage::Analysis => match &mc {
                Some(m) => run_analysis(&ctx, &mut w, m),
                None => Err(anyhow::anyhow!("no Monte Carlo table")),
            },
        };
        match result {
            Ok(pass) => {
                let outputs = w.commit()?;
                let s = if pass { Status::Pass } else { Status::Fail };
                if s == Status::Fail {
                    status = Status::Fail;
                }
                records.push(StageRecord { stage: stage.name().into(), status: s, outputs, partial: Vec::new(), error: None });
            }
            Err(e) => {
                status = Status::Error;
                records.push(StageRecord {
                    stage: stage.name().into(),
                    status: Status::Error,
                    outputs: Vec::new(),
                    partial: w.partials(),
                    error: Some(format!("{e:#}")),
                });
                break;
            }
        }
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        toolkit: toolkit_version(),
        config_hash: cfg.hash(),
        config_toml: cfg.effective_toml(),
        seed: cfg.seed,
        workers: cfg.io.workers,
        started,
        finished: now(),
        status,
        stages: records,
    };
    let path = out.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

/// Directory of a config file, for resolving relative paths in it.
pub fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
