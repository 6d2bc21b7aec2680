//! Experiment configuration: a sectioned TOML document where every key has a
//! default and unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use lace_core::diagrams::PROXY_C;
use lace_core::lattice::{LatticeKind, LatticeSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const WORKERS_ENV: &str = "LACE_LAB_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Oracle,
    Powercount,
    Mc,
    Diagrams,
    Analysis,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Oracle => "oracle",
            Stage::Powercount => "powercount",
            Stage::Mc => "mc",
            Stage::Diagrams => "diagrams",
            Stage::Analysis => "analysis",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub model: ModelConfig,
    pub mc: McConfig,
    pub oracle: OracleConfig,
    pub diagrams: DiagramsConfig,
    pub powercount: PowercountConfig,
    pub analysis: AnalysisConfig,
    pub io: IoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            stages: Vec::new(),
            model: ModelConfig::default(),
            mc: McConfig::default(),
            oracle: OracleConfig::default(),
            diagrams: DiagramsConfig::default(),
            powercount: PowercountConfig::default(),
            analysis: AnalysisConfig::default(),
            io: IoConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeName {
    NearestNeighbour,
    SpreadOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lattice: LatticeName,
    pub dimension: usize,
    pub torus_side: usize,
    /// Spread-out range L; ignored for nearest neighbour.
    pub range: usize,
    pub p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { lattice: LatticeName::NearestNeighbour, dimension: 2, torus_side: 3, range: 1, p: 0.4 }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> Result<LatticeSpec> {
        let kind = match self.lattice {
            LatticeName::NearestNeighbour => LatticeKind::NearestNeighbour,
            LatticeName::SpreadOut => LatticeKind::SpreadOut(self.range),
        };
        Ok(LatticeSpec::new(self.dimension, kind, self.torus_side)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub samples: usize,
    pub batches: usize,
    pub h_grid: Vec<f64>,
    /// Wave vectors 2πm/s along the first axis, m = 0..k_modes.
    pub k_modes: usize,
    /// Replace model.p by the wrapping estimate of p_c (nearest neighbour only).
    pub estimate_pc: bool,
    pub pc_sizes: Vec<usize>,
    pub pc_samples: usize,
    pub pc_tolerance: f64,
    pub pc_max_iterations: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            batches: 20,
            h_grid: vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1],
            k_modes: 2,
            estimate_pc: false,
            pc_sizes: vec![4, 5, 6],
            pc_samples: 200,
            pc_tolerance: 1e-6,
            pc_max_iterations: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridName {
    Acceptance,
    Invariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Bundled graph names.
    pub graphs: Vec<String>,
    /// Graph JSON files, relative to the config file.
    pub graph_files: Vec<String>,
    pub inequality_graphs: Vec<String>,
    pub instances: usize,
    pub grid: GridName,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            graphs: vec!["path3".into(), "path4".into(), "cycle4".into()],
            graph_files: Vec::new(),
            inequality_graphs: vec!["path4".into(), "cycle4".into()],
            instances: 100,
            grid: GridName::Acceptance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagramSource {
    Proxy,
    Measured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegralConfig {
    pub m: f64,
    pub n: f64,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagramsConfig {
    pub source: DiagramSource,
    pub p_omega: f64,
    pub c: f64,
    pub h_grid: Vec<f64>,
    pub polygon_orders: Vec<u32>,
    /// Samples per h for measured propagators.
    pub samples: usize,
    pub integrals: Vec<IntegralConfig>,
    pub integral_h: Vec<f64>,
}

impl Default for DiagramsConfig {
    fn default() -> Self {
        Self {
            source: DiagramSource::Proxy,
            p_omega: 1.0,
            c: PROXY_C,
            h_grid: vec![0.001, 0.01, 0.1],
            polygon_orders: vec![2, 3],
            samples: 200,
            integrals: Vec::new(),
            integral_h: vec![1e-12, 1e-11, 1e-10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowercountConfig {
    /// Bundled diagram names.
    pub graphs: Vec<String>,
    pub graph_files: Vec<String>,
    pub d: f64,
    pub mu: f64,
}

impl Default for PowercountConfig {
    fn default() -> Self {
        Self {
            graphs: vec!["bubble".into(), "triangle".into(), "square".into(), "square_one_massive".into()],
            graph_files: Vec::new(),
            d: 7.0,
            mu: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub delta_window: [f64; 2],
    pub tail_window: [f64; 2],
    pub surface_window: [f64; 2],
    pub q_max: f64,
    pub replicas: usize,
    pub bootstrap_seed: u64,
    pub sandwich_sigmas: f64,
    /// Fail the stage when exponents leave the mean-field tolerances.
    pub check_mean_field: bool,
    pub delta_tolerance: f64,
    pub tail_tolerance: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            delta_window: [1e-3, 1e-1],
            tail_window: [8.0, 512.0],
            surface_window: [1e-3, 1e-1],
            q_max: 4.0,
            replicas: 200,
            bootstrap_seed: 0x5eed,
            sandwich_sigmas: 3.0,
            check_mean_field: false,
            delta_tolerance: 0.1,
            tail_tolerance: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Worker threads. Not part of the hash or the echoed config, so outputs
    /// do not depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    /// Write the histogram and batch sidecars next to the Monte Carlo table.
    pub sidecars: bool,
    /// Write x, y, yerr, model tables next to each analysis fit.
    pub plot_data: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { workers: 1, sidecars: true, plot_data: true }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies LACE_LAB_WORKERS if set.
    pub fn with_env_workers(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            self.io.workers = v.trim().parse().with_context(|| format!("{WORKERS_ENV}={v:?} is not a worker count"))?;
            if self.io.workers == 0 {
                bail!("{WORKERS_ENV} must be at least 1");
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.spec()?;
        if !(0.0..=1.0).contains(&self.model.p) {
            bail!("model.p must lie in [0, 1]");
        }
        if self.io.workers == 0 {
            bail!("io.workers must be at least 1");
        }
        let mut seen = self.stages.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.stages.len() {
            bail!("stages lists a stage twice");
        }
        Ok(())
    }

    /// Stages whose inputs come from another stage must have it listed.
    pub fn check_dependencies(&self) -> Result<()> {
        let needs_mc = [
            (Stage::Diagrams, self.diagrams.source == DiagramSource::Measured),
            (Stage::Analysis, true),
        ];
        for (stage, needs) in needs_mc {
            if needs && self.stages.contains(&stage) && !self.stages.contains(&Stage::Mc) {
                bail!("stage {} needs stage mc", stage.name());
            }
        }
        Ok(())
    }

    /// The effective configuration as TOML, every default filled in.
    pub fn effective_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the effective TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.effective_toml().as_bytes()))
    }

    /// Stages in execution order.
    pub fn ordered_stages(&self) -> Vec<Stage> {
        let mut s = self.stages.clone();
        s.sort();
        s
    }
}
