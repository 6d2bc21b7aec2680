use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lace_core::diagrams::{reference_integral, triangle, IntegralSpec, PropagatorGrid, PROXY_C};
use lace_core::events::algebra::{DoublyConnected, GreenFreeConnection};
use lace_core::lattice::LatticeSpec;
use lace_core::oracle::identities::{
    standard_sets, verify_expansion, verify_f2_decomposition, verify_factorization, verify_pivotal_equality, GridPoint,
    IdentityReport,
};
use lace_core::oracle::inequalities::InequalityReport;
use lace_core::oracle::GreenMode;
use lace_core::powercount::classify;
use lace_lab::config::{ExperimentConfig, Stage};
use lace_lab::output::{json_document, StageWriter};
use lace_lab::report::report;
use lace_lab::run::{config_base, run, RunManifest, Status};
use lace_lab::stages::{
    fit_kind, load_feynman_graph, load_finite_graph, plot_rows, read_mc, run_analysis, FitKind, StageContext,
};
use lace_lab::suite::{cut_the_tail_instance, gfree_bk_instance};
use serde_json::json;

#[derive(Parser)]
#[command(name = "lace-lab", version, about = "Percolation lace-expansion laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage listed in the config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarise a run from its manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact identities and inequalities on small graphs.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Monte Carlo estimates on a torus.
    Mc {
        #[command(subcommand)]
        command: StageCommand,
    },
    /// Lattice diagrams and reference integrals.
    Diagrams {
        #[command(subcommand)]
        command: DiagramsCommand,
    },
    /// Feynman-diagram power counting.
    Powercount {
        #[command(subcommand)]
        command: PowercountCommand,
    },
    /// Fits to Monte Carlo tables.
    Analysis {
        #[command(subcommand)]
        command: AnalysisCommand,
    },
}

#[derive(Subcommand)]
enum StageCommand {
    /// Run this stage alone.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IdentityName {
    Cond0,
    Pivotal,
    Expan0,
    Taueq14,
    Taf12,
    F2decomp,
    Cutthetail,
    Gfreebk,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Check one identity or inequality at one (p, h).
    Verify {
        #[arg(long, value_enum)]
        identity: IdentityName,
        /// Bundled graph name or graph JSON file.
        #[arg(long)]
        graph: String,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        h: f64,
        /// Random instances for the inequalities.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the configured identity suite.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DiagramsCommand {
    /// Run the configured diagram stage.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Triangle of the mean-field proxy on a nearest-neighbour torus.
    Triangle {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        side: usize,
        #[arg(long, default_value_t = 1.0)]
        p_omega: f64,
        #[arg(long, default_value_t = 0.0)]
        h: f64,
        #[arg(long, default_value_t = PROXY_C)]
        c: f64,
    },
    /// I_{m,n}^{(d)}(h) by quadrature.
    Integral {
        #[arg(long)]
        m: f64,
        #[arg(long)]
        n: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, num_args = 1.., required = true)]
        h: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum PowercountCommand {
    /// Degrees and verdict of one diagram.
    Classify {
        /// Bundled diagram name or diagram JSON file.
        #[arg(long)]
        graph: String,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
    },
    /// Run the configured power-counting stage.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Delta,
    Tau,
    Tail,
    Eta,
}

#[derive(Subcommand)]
enum AnalysisCommand {
    /// One fit to an mc.csv table.
    Fit {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// mc.csv written by `mc run`; sidecars are read from beside it.
        #[arg(long = "in")]
        input: PathBuf,
        /// Take the analysis settings from this config instead of the table's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write x, y, yerr, model rows here.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Run the full analysis stage on an mc.csv table.
    Run {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// How a command ended.
enum Failure {
    /// Bad arguments or config: exit 2.
    Usage(anyhow::Error),
    /// A check failed or a stage errored: exit 1.
    Failed(Option<anyhow::Error>),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Failed(Some(e))
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).and_then(|c| c.with_env_workers()).map_err(Failure::Usage)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn finish_run(m: &RunManifest, out: &Path) -> Result<(), Failure> {
    for s in &m.stages {
        println!("{:<11} {}", s.stage, s.status.name());
    }
    println!("manifest {}", out.join(lace_lab::run::MANIFEST_NAME).display());
    match m.status {
        Status::Pass => Ok(()),
        Status::Fail => Err(Failure::Failed(None)),
        Status::Error => {
            let s = m.failed_stage().expect("errored stage");
            let partial = if s.partial.is_empty() { String::new() } else { format!(" (partial outputs: {})", s.partial.join(", ")) };
            Err(Failure::Failed(Some(anyhow!("stage {} failed: {}{partial}", s.stage, s.error.as_deref().unwrap_or("")))))
        }
    }
}

fn run_stages(config: &Path, out: &Path, only: Option<Stage>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = only {
        cfg.stages = vec![s];
    } else {
        cfg.check_dependencies().map_err(Failure::Usage)?;
    }
    let m = run(&cfg, &config_base(config), out)?;
    finish_run(&m, out)
}

fn pass_json(v: &serde_json::Value) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v).map_err(anyhow::Error::from)?);
    if v["pass"].as_bool() == Some(true) {
        Ok(())
    } else {
        Err(Failure::Failed(None))
    }
}

fn verify(identity: IdentityName, graph: &str, p: f64, h: f64, instances: usize, seed: u64) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&p) || !(h >= 0.0) {
        return Err(Failure::Usage(anyhow!("need 0 ≤ p ≤ 1 and h ≥ 0")));
    }
    let g = load_finite_graph(graph, Path::new(".")).map_err(Failure::Usage)?;
    let grid = [GridPoint { p, h }];
    let mut cfg = ExperimentConfig { seed, ..Default::default() };
    cfg.oracle.graphs = vec![graph.to_string()];
    cfg.oracle.instances = instances;
    let identity_json = |r: IdentityReport| json!({"identity": r.identity, "residual_or_slack": r.residual, "terms": r.terms, "pass": r.pass});
    let inequality_json = |r: InequalityReport| {
        json!({"identity": r.inequality, "residual_or_slack": r.min_slack, "terms": r.terms, "violations": r.violations, "instances": instances, "pass": r.pass})
    };
    let body = match identity {
        IdentityName::Cond0 => {
            let (u, v) = g.bond(0);
            let far = g.site_count() - 1;
            let [mut a, b] =
                verify_factorization::<f64, _, _>(&g, 0, 1 << u, &DoublyConnected(0, u), &GreenFreeConnection(v, far), GreenMode::Analytic, &grid)
                    .map_err(anyhow::Error::from)?;
            a.absorb(&b);
            identity_json(a)
        }
        IdentityName::Pivotal => identity_json(verify_pivotal_equality::<f64>(&g, 1, &grid).map_err(anyhow::Error::from)?),
        IdentityName::Expan0 | IdentityName::Taueq14 | IdentityName::Taf12 => {
            let e = verify_expansion::<f64>(&g, 0, &grid).map_err(anyhow::Error::from)?;
            identity_json(match identity {
                IdentityName::Expan0 => e.expan0,
                IdentityName::Taueq14 => e.taueq14,
                _ => e.taf12,
            })
        }
        IdentityName::F2decomp => {
            let pairs: Vec<(usize, usize)> = (0..g.site_count()).map(|x| (0, x)).collect();
            identity_json(verify_f2_decomposition::<f64>(&g, &pairs, &standard_sets(&g, 0), &grid).map_err(anyhow::Error::from)?)
        }
        IdentityName::Cutthetail | IdentityName::Gfreebk => {
            let mut total: Option<InequalityReport> = None;
            for i in 0..instances as u64 {
                let r = if matches!(identity, IdentityName::Cutthetail) {
                    cut_the_tail_instance(&g, seed, i, &grid)
                } else {
                    gfree_bk_instance(&g, seed, i, &grid)
                }
                .map_err(anyhow::Error::from)?;
                match &mut total {
                    Some(t) => t.absorb(&r),
                    None => total = Some(r),
                }
            }
            inequality_json(total.ok_or_else(|| Failure::Usage(anyhow!("need at least one instance")))?)
        }
    };
    let mut doc = json_document(&cfg, "oracle-verify", &body)?;
    doc["graph"] = json!(graph);
    doc["p"] = json!(p);
    doc["h"] = json!(h);
    pass_json(&doc)
}

fn analysis_fit(kind: KindArg, input: &Path, config: Option<&Path>, out: Option<&Path>, plot: Option<&Path>) -> Result<(), Failure> {
    let (table_cfg, mc) = read_mc(input).map_err(Failure::Usage)?;
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => table_cfg,
    };
    let kind = match kind {
        KindArg::Delta => FitKind::Delta,
        KindArg::Tau => FitKind::Tau,
        KindArg::Tail => FitKind::Tail,
        KindArg::Eta => FitKind::Eta,
    };
    let fit = fit_kind(kind, &mc, &cfg.analysis)?;
    let body = json!({"fit": fit.fit, "residuals": fit.surface.as_ref().map(|s| &s.residuals), "p": mc.p});
    let doc = json_document(&cfg, &format!("analysis-{}", kind.name()), &body)?;
    emit(&(serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)? + "\n"), out)?;
    if let Some(p) = plot {
        let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = p.file_name().ok_or_else(|| Failure::Usage(anyhow!("bad plot path")))?.to_string_lossy().to_string();
        let mut w = StageWriter::new(dir, &cfg)?;
        w.csv(&name, &["x", "y", "yerr", "model"], &plot_rows(&fit.plot))?;
        w.commit()?;
    }
    Ok(())
}

fn analysis_run(input: &Path, out: &Path) -> Result<(), Failure> {
    let (cfg, mc) = read_mc(input).map_err(Failure::Usage)?;
    let cfg = ExperimentConfig { stages: vec![Stage::Analysis], ..cfg }.with_env_workers().map_err(Failure::Usage)?;
    let ctx = StageContext { cfg: &cfg, base: config_base(input) };
    let mut w = StageWriter::new(out, &cfg)?;
    match run_analysis(&ctx, &mut w, &mc) {
        Ok(pass) => {
            for f in w.commit()? {
                println!("{}", out.join(f).display());
            }
            if pass {
                Ok(())
            } else {
                Err(Failure::Failed(None))
            }
        }
        Err(e) => Err(Failure::Failed(Some(e.context(format!("partial outputs: {}", w.partials().join(", ")))))),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out } => run_stages(&config, &out, None),
        Command::Report { manifest, out } => {
            let r = report(&manifest).map_err(Failure::Usage)?;
            emit(&r.text, out.as_deref())?;
            if r.complete {
                Ok(())
            } else {
                Err(Failure::Failed(None))
            }
        }
        Command::Oracle { command } => match command {
            OracleCommand::Verify { identity, graph, p, h, instances, seed } => verify(identity, &graph, p, h, instances, seed),
            OracleCommand::Suite { config, out } => run_stages(&config, &out, Some(Stage::Oracle)),
        },
        Command::Mc { command: StageCommand::Run { config, out } } => run_stages(&config, &out, Some(Stage::Mc)),
        Command::Diagrams { command } => match command {
            DiagramsCommand::Run { config, out } => run_stages(&config, &out, Some(Stage::Diagrams)),
            DiagramsCommand::Triangle { d, side, p_omega, h, c } => {
                let spec = LatticeSpec::nearest_neighbour(d, side).map_err(|e| Failure::Usage(e.into()))?;
                let g = PropagatorGrid::proxy(&spec, h, p_omega, c).map_err(|e| Failure::Usage(e.into()))?;
                println!("quantity,h,value,error_estimate");
                println!("triangle,{h},{},", triangle(&g));
                Ok(())
            }
            DiagramsCommand::Integral { m, n, d, h } => {
                println!("quantity,h,value,error_estimate");
                for h in h {
                    let v = reference_integral(&IntegralSpec { m, n, d, h }).map_err(|e| Failure::Usage(e.into()))?;
                    match v {
                        lace_core::diagrams::IntegralValue::Finite { value, error } => println!("integral,{h},{value},{error}"),
                        lace_core::diagrams::IntegralValue::Divergent => println!("integral,{h},inf,"),
                    }
                }
                Ok(())
            }
        },
        Command::Powercount { command } => match command {
            PowercountCommand::Classify { graph, d, mu } => {
                let g = load_feynman_graph(&graph, Path::new(".")).map_err(Failure::Usage)?;
                let r = classify(&g, d, mu).map_err(|e| Failure::Usage(e.into()))?;
                let mut cfg = ExperimentConfig::default();
                cfg.powercount.graphs = vec![graph.clone()];
                cfg.powercount.d = d;
                cfg.powercount.mu = mu;
                let mut doc = json_document(&cfg, "powercount-classify", &r)?;
                doc["graph"] = json!(graph);
                println!("{}", serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?);
                Ok(())
            }
            PowercountCommand::Run { config, out } => run_stages(&config, &out, Some(Stage::Powercount)),
        },
        Command::Analysis { command } => match command {
            AnalysisCommand::Fit { kind, input, config, out, plot_data } => {
                analysis_fit(kind, &input, config.as_deref(), out.as_deref(), plot_data.as_deref())
            }
            AnalysisCommand::Run { input, out } => analysis_run(&input, &out),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(e)) => {
            if let Some(e) = e {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
