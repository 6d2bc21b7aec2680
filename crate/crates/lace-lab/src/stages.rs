//! The five pipeline stages. Each writes through a [`StageWriter`] and
//! reports whether its checks passed.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lace_core::analysis::{
    envelope_check, fit_cluster_tail, fit_eta, fit_magnetization, fit_tau_surface, magnetization_sandwich, power_sum,
    residual_trend, Bootstrap, EnvelopeCheck, FitResult, FitWindow, ResidualTrend, SandwichRow, Series, SurfaceData,
    SurfaceFit, TailData, FIELD_COEFFICIENT,
};
use lace_core::diagrams::{
    expected_scaling, least_squares, polygon, reference_integral, square_one_massive, triangle, IntegralScaling,
    IntegralSpec, IntegralValue, PropagatorGrid, PropagatorSource,
};
use lace_core::events::FiniteGraph;
use lace_core::lattice::{LatticeKind, LatticeSpec};
use lace_core::mc::{
    axis_wave_vectors, estimate_pc, measure, two_point_function, BatchMeans, Estimate, HistogramBin, ObservableTable,
    PcConfig, PcEstimate, SimulationPlan,
};
use lace_core::oracle::identities::{acceptance_grid, invariant_grid, GridPoint, IdentityReport, IDENTITY_TOLERANCE};
use lace_core::oracle::inequalities::InequalityReport;
use lace_core::powercount::{classify, DegreeReport, FeynmanGraph, Mass, Verdict};
use serde::Serialize;

use crate::config::{AnalysisConfig, DiagramSource, ExperimentConfig, GridName};
use crate::output::{num, read_csv, StageWriter};
use crate::suite::{bundled_graph, identity_suite, inequality_suite};

/// Where a stage reads inputs from and how it is configured.
pub struct StageContext<'a> {
    pub cfg: &'a ExperimentConfig,
    /// Directory against which relative graph files resolve.
    pub base: PathBuf,
}

impl StageContext<'_> {
    fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn grid_points(name: GridName) -> Vec<GridPoint> {
    match name {
        GridName::Acceptance => acceptance_grid(),
        GridName::Invariant => invariant_grid(),
    }
}

/// A bundled graph name or a path to graph JSON.
pub fn load_finite_graph(spec: &str, base: &Path) -> Result<FiniteGraph> {
    if let Some(g) = bundled_graph(spec) {
        return Ok(g);
    }
    let path = if Path::new(spec).is_absolute() { PathBuf::from(spec) } else { base.join(spec) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("{spec} is neither a bundled graph nor a readable file"))?;
    FiniteGraph::from_json(&text).with_context(|| format!("parsing graph {}", path.display()))
}

#[derive(Serialize)]
pub struct GraphIdentities {
    pub graph: String,
    pub sites: usize,
    pub bonds: usize,
    pub identities: Vec<IdentityReport>,
}

#[derive(Serialize)]
pub struct InequalitySummary {
    #[serde(flatten)]
    pub report: InequalityReport,
    pub instances: usize,
}

#[derive(Serialize)]
pub struct OracleSummary {
    pub grid_points: usize,
    pub tolerance: f64,
    pub graphs: Vec<GraphIdentities>,
    pub inequalities: Vec<InequalitySummary>,
    pub pass: bool,
}

pub fn run_oracle(ctx: &StageContext, w: &mut StageWriter) -> Result<bool> {
    let cfg = &ctx.cfg.oracle;
    let grid = grid_points(cfg.grid);
    let mut names: Vec<(String, FiniteGraph)> = Vec::new();
    for n in &cfg.graphs {
        names.push((n.clone(), bundled_graph(n).ok_or_else(|| anyhow!("unknown bundled graph {n}"))?));
    }
    for f in &cfg.graph_files {
        names.push((f.clone(), load_finite_graph(&ctx.resolve(f).to_string_lossy(), &ctx.base)?));
    }
    let mut graphs = Vec::new();
    for (name, g) in &names {
        let identities = identity_suite(g, &grid).with_context(|| format!("graph {name}"))?;
        graphs.push(GraphIdentities { graph: name.clone(), sites: g.site_count(), bonds: g.bond_count(), identities });
    }
    let mut inequalities = Vec::new();
    if cfg.instances > 0 {
        let ig = cfg
            .inequality_graphs
            .iter()
            .map(|n| bundled_graph(n).ok_or_else(|| anyhow!("unknown bundled graph {n}")))
            .collect::<Result<Vec<_>>>()?;
        if ig.is_empty() {
            bail!("oracle.inequality_graphs is empty");
        }
        for report in inequality_suite(&ig, cfg.instances, ctx.cfg.seed, &invariant_grid())? {
            inequalities.push(InequalitySummary { report, instances: cfg.instances });
        }
    }
    let pass = graphs.iter().all(|g| g.identities.iter().all(|r| r.pass)) && inequalities.iter().all(|i| i.report.pass);
    let summary = OracleSummary { grid_points: grid.len(), tolerance: IDENTITY_TOLERANCE, graphs, inequalities, pass };
    w.json("oracle.json", "oracle", &summary)?;
    Ok(pass)
}

/// A bundled diagram name or a path to diagram JSON.
pub fn load_feynman_graph(spec: &str, base: &Path) -> Result<FeynmanGraph> {
    let g = match spec {
        "bubble" => FeynmanGraph::bubble(),
        "triangle" => FeynmanGraph::cycle(3),
        "square" => FeynmanGraph::cycle(4),
        "square_one_massive" => FeynmanGraph::cycle(4).with_mass(0, Mass::Massive),
        "theta" => FeynmanGraph::massless(2, &[(0, 1), (0, 1), (0, 1)])?,
        _ => {
            let path = if Path::new(spec).is_absolute() { PathBuf::from(spec) } else { base.join(spec) };
            let text = std::fs::read_to_string(&path).with_context(|| format!("{spec} is neither a bundled diagram nor a readable file"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing diagram {}", path.display()))?
        }
    };
    Ok(g)
}

pub fn verdict_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::ConvergentAllMu => "ConvergentAllMu",
        Verdict::ConvergentPositiveMuOnly { .. } => "ConvergentPositiveMuOnly",
        Verdict::DivergentEvenPositiveMu => "DivergentEvenPositiveMu",
    }
}

pub fn fraction(r: Option<(i64, i64)>) -> String {
    match r {
        None => "none".into(),
        Some((n, 1)) => n.to_string(),
        Some((n, d)) => format!("{n}/{d}"),
    }
}

#[derive(Serialize)]
pub struct ClassifiedGraph {
    pub graph: String,
    pub diagram: FeynmanGraph,
    pub report: DegreeReport,
}

#[derive(Serialize)]
pub struct PowercountSummary {
    pub d: f64,
    pub mu: f64,
    pub graphs: Vec<ClassifiedGraph>,
}

pub fn powercount_row(name: &str, r: &DegreeReport) -> Vec<String> {
    let deg = |d: &Option<lace_core::powercount::Degree>| d.as_ref().map_or("none".into(), |x| num(x.value));
    let (rate, logp) = match r.verdict {
        Verdict::ConvergentPositiveMuOnly { rate_exponent, log_power } => (num(rate_exponent), log_power.to_string()),
        _ => (String::new(), String::new()),
    };
    vec![
        name.to_string(),
        r.loops.to_string(),
        r.lines.to_string(),
        deg(&r.deg_0),
        deg(&r.deg_mu),
        deg(&r.uv_degree),
        fraction(r.d_c),
        verdict_name(&r.verdict).to_string(),
        rate,
        logp,
        r.rate_bound.map_or(String::new(), num),
    ]
}

pub const POWERCOUNT_HEADER: [&str; 11] =
    ["graph", "loops", "lines", "deg_0", "deg_mu", "uv_degree", "d_c", "verdict", "rate_exponent", "log_power", "rate_bound"];

pub fn run_powercount(ctx: &StageContext, w: &mut StageWriter) -> Result<bool> {
    let cfg = &ctx.cfg.powercount;
    let mut graphs = Vec::new();
    for name in cfg.graphs.iter().chain(&cfg.graph_files) {
        let g = load_feynman_graph(name, &ctx.base)?;
        let report = classify(&g, cfg.d, cfg.mu).with_context(|| format!("diagram {name}"))?;
        graphs.push(ClassifiedGraph { graph: name.clone(), diagram: g, report });
    }
    let rows: Vec<Vec<String>> = graphs.iter().map(|g| powercount_row(&g.graph, &g.report)).collect();
    w.csv("powercount.csv", &POWERCOUNT_HEADER, &rows)?;
    w.json("powercount.json", "powercount", &PowercountSummary { d: cfg.d, mu: cfg.mu, graphs })?;
    Ok(true)
}

/// A Monte Carlo table with what is needed to analyse it.
#[derive(Clone, Debug)]
pub struct McProducts {
    pub lattice: LatticeSpec,
    pub p: f64,
    pub table: ObservableTable,
}

#[derive(Serialize)]
struct McSummary<'a> {
    p: f64,
    p_c: Option<&'a PcEstimate>,
    volume: usize,
    omega: usize,
    samples: usize,
    cluster_count: Estimate,
}

pub const MC_HEADER: [&str; 6] = ["quantity", "h", "k_index", "estimate", "stderr", "n_samples"];

fn est_row(q: &str, h: Option<f64>, k: Option<usize>, e: &Estimate) -> Vec<String> {
    vec![
        q.to_string(),
        h.map_or(String::new(), num),
        k.map_or(String::new(), |k| k.to_string()),
        num(e.mean),
        num(e.stderr),
        e.n_samples.to_string(),
    ]
}

pub fn run_mc(ctx: &StageContext, w: &mut StageWriter) -> Result<McProducts> {
    let cfg = ctx.cfg;
    let lattice = cfg.model.spec()?;
    let workers = cfg.io.workers;
    let pc = if cfg.mc.estimate_pc {
        if lattice.kind != LatticeKind::NearestNeighbour {
            bail!("estimate_pc needs the nearest-neighbour model");
        }
        let pcfg = PcConfig {
            sizes: cfg.mc.pc_sizes.clone(),
            samples: cfg.mc.pc_samples,
            seed: cfg.seed,
            tolerance: cfg.mc.pc_tolerance,
            max_iterations: cfg.mc.pc_max_iterations,
            workers,
        };
        Some(estimate_pc(lattice.dimension, &pcfg)?)
    } else {
        None
    };
    let p = pc.as_ref().map_or(cfg.model.p, |e| e.p_c);
    let plan = SimulationPlan {
        lattice,
        p,
        h_grid: cfg.mc.h_grid.clone(),
        k_list: axis_wave_vectors(&lattice, cfg.mc.k_modes),
        samples: cfg.mc.samples,
        seed: cfg.seed,
        workers,
        batches: cfg.mc.batches,
    };
    let table = measure(&plan)?;
    let mut rows = vec![est_row("p", None, None, &Estimate { mean: p, stderr: 0.0, n_samples: table.samples })];
    for (j, &h) in table.h_grid.iter().enumerate() {
        rows.push(est_row("magnetization", Some(h), None, &table.magnetization[j]));
    }
    for (j, &h) in table.h_grid.iter().enumerate() {
        rows.push(est_row("susceptibility", Some(h), None, &table.susceptibility[j]));
    }
    for (name, grid) in [("tau", &table.tau), ("tau_imag", &table.tau_imag)] {
        for (j, &h) in table.h_grid.iter().enumerate() {
            for (k, e) in grid[j].iter().enumerate() {
                rows.push(est_row(name, Some(h), Some(k), e));
            }
        }
    }
    rows.push(est_row("cluster_count", None, None, &table.cluster_count));
    w.csv("mc.csv", &MC_HEADER, &rows)?;
    if cfg.io.sidecars {
        let hist: Vec<Vec<String>> =
            table.histogram.iter().map(|b| vec![b.n_low.to_string(), b.n_high.to_string(), b.count.to_string()]).collect();
        w.csv("mc.hist.csv", &["n_low", "n_high", "count"], &hist)?;
        let b = &table.batches;
        let mut rows = Vec::new();
        for (i, &count) in b.counts.iter().enumerate() {
            for (name, v) in [
                ("magnetization", &b.magnetization[i]),
                ("susceptibility", &b.susceptibility[i]),
                ("tau", &b.tau[i]),
                ("histogram", &b.histogram[i]),
            ] {
                for (j, x) in v.iter().enumerate() {
                    rows.push(vec![i.to_string(), count.to_string(), name.to_string(), j.to_string(), num(*x)]);
                }
            }
        }
        w.csv("mc.batches.csv", &["batch", "count", "quantity", "index", "value"], &rows)?;
    }
    let summary = McSummary {
        p,
        p_c: pc.as_ref(),
        volume: table.volume,
        omega: lattice.omega_size(),
        samples: table.samples,
        cluster_count: table.cluster_count,
    };
    w.json("mc.json", "mc", &summary)?;
    Ok(McProducts { lattice, p, table })
}

fn parse_f64(s: &str) -> Result<f64> {
    if s.is_empty() {
        Ok(f64::NAN)
    } else {
        s.parse().with_context(|| format!("bad number {s:?}"))
    }
}

/// Rebuilds the table from `mc.csv` and, if present, its sidecars.
pub fn read_mc(path: &Path) -> Result<(ExperimentConfig, McProducts)> {
    let csv = read_csv(path)?;
    let cfg = csv.config()?;
    let lattice = cfg.model.spec()?;
    let k_list = axis_wave_vectors(&lattice, cfg.mc.k_modes);
    let nk = k_list.len();
    let col = |n: &str| csv.column(n);
    let (cq, ch, ck, ce, cs, cn) = (col("quantity")?, col("h")?, col("k_index")?, col("estimate")?, col("stderr")?, col("n_samples")?);
    let mut p = None;
    let mut samples = 0;
    let mut h_grid = Vec::new();
    let (mut mag, mut sus, mut tau, mut tau_imag) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut clusters = None;
    for r in &csv.rows {
        let e = Estimate { mean: parse_f64(&r[ce])?, stderr: parse_f64(&r[cs])?, n_samples: r[cn].parse()? };
        match r[cq].as_str() {
            "p" => {
                p = Some(e.mean);
                samples = e.n_samples;
            }
            "magnetization" => {
                h_grid.push(parse_f64(&r[ch])?);
                mag.push(e);
            }
            "susceptibility" => sus.push(e),
            "tau" | "tau_imag" => {
                let k: usize = r[ck].parse()?;
                let dest = if r[cq] == "tau" { &mut tau } else { &mut tau_imag };
                if k == 0 {
                    dest.push(Vec::with_capacity(nk));
                }
                dest.last_mut().context("tau rows out of order")?.push(e);
            }
            "cluster_count" => clusters = Some(e),
            other => bail!("unknown quantity {other}"),
        }
    }
    let p = p.context("mc.csv has no p row")?;
    if sus.len() != h_grid.len() || tau.len() != h_grid.len() || tau.iter().any(|r| r.len() != nk) {
        bail!("mc.csv rows do not match its h grid and wave vectors");
    }
    let stem = path.to_string_lossy();
    let stem = stem.strip_suffix(".csv").unwrap_or(&stem);
    let hist_path = PathBuf::from(format!("{stem}.hist.csv"));
    let batch_path = PathBuf::from(format!("{stem}.batches.csv"));
    let mut histogram = Vec::new();
    if hist_path.exists() {
        let h = read_csv(&hist_path)?;
        for r in &h.rows {
            histogram.push(HistogramBin { n_low: r[0].parse()?, n_high: r[1].parse()?, count: r[2].parse()? });
        }
    }
    let mut batches = BatchMeans::default();
    if batch_path.exists() {
        let b = read_csv(&batch_path)?;
        for r in &b.rows {
            let i: usize = r[0].parse()?;
            if i == batches.counts.len() {
                batches.counts.push(r[1].parse()?);
                batches.magnetization.push(Vec::new());
                batches.susceptibility.push(Vec::new());
                batches.tau.push(Vec::new());
                batches.histogram.push(Vec::new());
            }
            let v = parse_f64(&r[4])?;
            match r[2].as_str() {
                "magnetization" => batches.magnetization[i].push(v),
                "susceptibility" => batches.susceptibility[i].push(v),
                "tau" => batches.tau[i].push(v),
                "histogram" => batches.histogram[i].push(v),
                other => bail!("unknown batch quantity {other}"),
            }
        }
    }
    let table = ObservableTable {
        h_grid,
        k_list,
        magnetization: mag,
        susceptibility: sus,
        tau,
        tau_imag,
        cluster_count: clusters.context("mc.csv has no cluster_count row")?,
        histogram,
        samples,
        volume: lattice.volume(),
        batches,
    };
    Ok((cfg, McProducts { lattice, p, table }))
}

pub const DIAGRAMS_HEADER: [&str; 4] = ["quantity", "h", "value", "error_estimate"];

/// Largest doubled torus used for finite-size error estimates.
const FINITE_SIZE_VOLUME: usize = 1 << 20;

fn proxy_quantities(lattice: &LatticeSpec, h: f64, p_omega: f64, c: f64, orders: &[u32]) -> Result<Vec<(String, f64)>> {
    let gh = PropagatorGrid::proxy(lattice, h, p_omega, c)?;
    let g0 = PropagatorGrid::proxy(lattice, 0.0, p_omega, c)?;
    grid_quantities(&gh, &g0, orders)
}

fn grid_quantities(gh: &PropagatorGrid, g0: &PropagatorGrid, orders: &[u32]) -> Result<Vec<(String, f64)>> {
    let mut out = vec![("triangle".to_string(), triangle(gh))];
    for &m in orders {
        out.push((format!("polygon{m}_sup"), polygon(gh, m)?.sup));
    }
    out.push(("square_one_massive".into(), square_one_massive(gh, g0)?));
    Ok(out)
}

#[derive(Serialize)]
struct IntegralSummary {
    m: f64,
    n: f64,
    d: usize,
    expected: IntegralScaling,
    h: Vec<f64>,
    values: Vec<Option<f64>>,
    slope: Option<f64>,
}

#[derive(Serialize)]
struct DiagramsSummary {
    source: DiagramSource,
    p_omega: f64,
    integrals: Vec<IntegralSummary>,
}

/// `p` is the bond probability for measured propagators.
pub fn run_diagrams(ctx: &StageContext, w: &mut StageWriter, p: f64) -> Result<bool> {
    let cfg = &ctx.cfg.diagrams;
    let lattice = ctx.cfg.model.spec()?;
    let mut rows = Vec::new();
    let p_omega = match cfg.source {
        DiagramSource::Proxy => cfg.p_omega,
        DiagramSource::Measured => p * lattice.omega_size() as f64,
    };
    match cfg.source {
        DiagramSource::Proxy => {
            let mut doubled = lattice;
            doubled.torus_side *= 2;
            let with_error = doubled.volume() <= FINITE_SIZE_VOLUME;
            for &h in &cfg.h_grid {
                let q = proxy_quantities(&lattice, h, cfg.p_omega, cfg.c, &cfg.polygon_orders)?;
                let q2 = if with_error { Some(proxy_quantities(&doubled, h, cfg.p_omega, cfg.c, &cfg.polygon_orders)?) } else { None };
                for (i, (name, v)) in q.iter().enumerate() {
                    let err = q2.as_ref().map_or(String::new(), |q2| num((q2[i].1 - v).abs()));
                    rows.push(vec![name.clone(), num(h), num(*v), err]);
                }
            }
        }
        DiagramSource::Measured => {
            let grid = |h: f64| -> Result<PropagatorGrid> {
                let tau = two_point_function(&lattice, p, h, cfg.samples, ctx.cfg.seed, ctx.cfg.io.workers)?;
                Ok(PropagatorGrid::from_position(&lattice, h, &tau, PropagatorSource::Measured { samples: cfg.samples })?)
            };
            let g0 = grid(0.0)?;
            for &h in &cfg.h_grid {
                let gh = if h == 0.0 { g0.clone() } else { grid(h)? };
                for (name, v) in grid_quantities(&gh, &g0, &cfg.polygon_orders)? {
                    rows.push(vec![name, num(h), num(v), String::new()]);
                }
            }
        }
    }
    let mut integrals = Vec::new();
    for ic in &cfg.integrals {
        let name = format!("integral_m{}_n{}_d{}", ic.m, ic.n, ic.d);
        let mut values = Vec::new();
        for &h in &cfg.integral_h {
            let v = reference_integral(&IntegralSpec { m: ic.m, n: ic.n, d: ic.d, h })?;
            match v {
                IntegralValue::Finite { value, error } => rows.push(vec![name.clone(), num(h), num(value), num(error)]),
                IntegralValue::Divergent => rows.push(vec![name.clone(), num(h), "inf".into(), String::new()]),
            }
            values.push(v.value());
        }
        let pts: Vec<(f64, f64)> = cfg
            .integral_h
            .iter()
            .zip(&values)
            .filter_map(|(&h, v)| v.filter(|&v| h > 0.0 && v > 0.0).map(|v| (h.ln(), v.ln())))
            .collect();
        let slope = if pts.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let s = least_squares(&x, &y).0;
            rows.push(vec![format!("slope_m{}_n{}_d{}", ic.m, ic.n, ic.d), String::new(), num(s), String::new()]);
            Some(s)
        } else {
            None
        };
        integrals.push(IntegralSummary {
            m: ic.m,
            n: ic.n,
            d: ic.d,
            expected: expected_scaling(ic.m, ic.n, ic.d),
            h: cfg.integral_h.clone(),
            values,
            slope,
        });
    }
    w.csv("diagrams.csv", &DIAGRAMS_HEADER, &rows)?;
    w.json("diagrams.json", "diagrams", &DiagramsSummary { source: cfg.source, p_omega, integrals })?;
    Ok(true)
}

/// Which fit the `analysis fit` command performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Delta,
    Tau,
    Tail,
    Eta,
}

impl FitKind {
    pub fn name(self) -> &'static str {
        match self {
            FitKind::Delta => "delta",
            FitKind::Tau => "tau",
            FitKind::Tail => "tail",
            FitKind::Eta => "eta",
        }
    }
}

fn window(w: [f64; 2]) -> FitWindow {
    FitWindow::new(w[0], w[1])
}

fn boot(a: &AnalysisConfig) -> Bootstrap {
    Bootstrap { replicas: a.replicas, seed: a.bootstrap_seed }
}

/// Index of the smallest field inside the surface window.
fn eta_row(data: &SurfaceData, a: &AnalysisConfig) -> Option<usize> {
    let w = window(a.surface_window);
    (0..data.h.len()).filter(|&i| w.contains(data.h[i])).min_by(|&i, &j| data.h[i].total_cmp(&data.h[j]))
}

/// One fit with its x, y, yerr, model rows for plotting.
pub struct FitOutput {
    pub fit: FitResult,
    pub surface: Option<SurfaceFit>,
    pub plot: Vec<[f64; 4]>,
}

pub fn fit_kind(kind: FitKind, mc: &McProducts, a: &AnalysisConfig) -> Result<FitOutput> {
    let t = &mc.table;
    match kind {
        FitKind::Delta => {
            let s = Series::magnetization(t);
            let fit = fit_magnetization(&s, window(a.delta_window), boot(a))?;
            let (e, amp) = (fit.parameters[0], fit.parameters[1]);
            let plot = (0..s.x.len()).map(|i| [s.x[i], s.y[i], s.y_err[i], amp * s.x[i].powf(e)]).collect();
            Ok(FitOutput { fit, surface: None, plot })
        }
        FitKind::Tail => {
            let d = TailData::from_table(t);
            let fit = fit_cluster_tail(&d, window(a.tail_window), boot(a))?;
            let (e, amp) = (fit.parameters[0], fit.parameters[1]);
            let plot = (0..d.n_low.len())
                .map(|j| [d.n_low[j] as f64, d.mass.y[j], d.mass.y_err[j], amp * power_sum(d.n_low[j], d.n_high[j], e)])
                .collect();
            Ok(FitOutput { fit, surface: None, plot })
        }
        FitKind::Tau => {
            let d = SurfaceData::from_table(&mc.lattice, t);
            let sf = fit_tau_surface(&d, window(a.surface_window), a.q_max, boot(a))?;
            let (c, d2) = (sf.fit.parameters[0], sf.fit.parameters[1]);
            let plot = d
                .points(window(a.surface_window), a.q_max)
                .iter()
                .map(|&(i, q, h)| {
                    let den = d2 * q + FIELD_COEFFICIENT * h.sqrt();
                    [q + FIELD_COEFFICIENT * h.sqrt(), d.tau.y[i], d.tau.y_err[i], c / den]
                })
                .collect();
            Ok(FitOutput { fit: sf.fit.clone(), surface: Some(sf), plot })
        }
        FitKind::Eta => {
            let d = SurfaceData::from_table(&mc.lattice, t);
            let row = eta_row(&d, a).context("no field inside the surface window")?;
            let fit = fit_eta(&d, row, a.q_max, boot(a))?;
            let nk = d.q.len();
            let slope = fit.parameters[1];
            let t0 = d.tau.y[row * nk];
            // Amplitude of the power law through the fitted points' centroid.
            let pts: Vec<(f64, f64)> = (1..nk)
                .filter(|&j| d.q[j] > 0.0 && d.q[j] <= a.q_max)
                .map(|j| (d.q[j], 1.0 / d.tau.y[row * nk + j] - 1.0 / t0))
                .filter(|&(_, g)| g > 0.0)
                .collect();
            let la = pts.iter().map(|&(q, g)| g.ln() - slope * q.ln()).sum::<f64>() / pts.len().max(1) as f64;
            let plot = (1..nk)
                .map(|j| {
                    let g = 1.0 / d.tau.y[row * nk + j] - 1.0 / t0;
                    let err = d.tau.y_err[row * nk + j] / d.tau.y[row * nk + j].powi(2);
                    [d.q[j], g, err, (la + slope * d.q[j].ln()).exp()]
                })
                .collect();
            Ok(FitOutput { fit, surface: None, plot })
        }
    }
}

pub fn plot_rows(plot: &[[f64; 4]]) -> Vec<Vec<String>> {
    plot.iter().map(|r| r.iter().map(|&x| num(x)).collect()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Serialize)]
pub struct AnalysisSummary {
    pub p: f64,
    pub fits: Vec<FitResult>,
    pub errors: Vec<(String, String)>,
    pub sandwich: Vec<SandwichRow>,
    pub envelope: Option<EnvelopeCheck>,
    pub residual_trend: Option<ResidualTrend>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Reference values of the mean-field exponents.
pub const REFERENCE: [(&str, f64); 3] = [("inverse_delta", 0.5), ("eta", 0.0), ("tail_exponent", 1.5)];

pub fn reference_value(name: &str) -> Option<f64> {
    REFERENCE.iter().find(|r| r.0 == name).map(|r| r.1)
}

pub fn run_analysis(ctx: &StageContext, w: &mut StageWriter, mc: &McProducts) -> Result<bool> {
    let a = &ctx.cfg.analysis;
    let mut fits = Vec::new();
    let mut errors = Vec::new();
    let mut checks = Vec::new();
    let mut surface = None;
    for kind in [FitKind::Delta, FitKind::Tail, FitKind::Tau, FitKind::Eta] {
        match fit_kind(kind, mc, a) {
            Ok(out) => {
                if ctx.cfg.io.plot_data {
                    w.csv(&format!("analysis.{}.plot.csv", kind.name()), &["x", "y", "yerr", "model"], &plot_rows(&out.plot))?;
                }
                if out.surface.is_some() {
                    surface = out.surface;
                }
                fits.push(out.fit);
            }
            Err(e) => {
                checks.push(Check { name: format!("fit_{}", kind.name()), pass: false, detail: e.to_string() });
                errors.push((kind.name().to_string(), e.to_string()));
            }
        }
    }
    let sandwich = magnetization_sandwich(&mc.table, mc.p, mc.lattice.omega_size(), a.sandwich_sigmas);
    let outside = sandwich.iter().filter(|r| !r.inside).count();
    checks.push(Check {
        name: "sandwich".into(),
        pass: outside == 0,
        detail: format!("{} of {} fields inside at {}σ", sandwich.len() - outside, sandwich.len(), a.sandwich_sigmas),
    });
    let data = SurfaceData::from_table(&mc.lattice, &mc.table);
    let envelope = match envelope_check(&data, window(a.surface_window), a.q_max) {
        Ok(e) => {
            checks.push(Check {
                name: "envelope".into(),
                pass: e.pass,
                detail: format!("K1 {:.4} K2 {:.4}, {} of {} outside", e.k1, e.k2, e.outside, e.validated),
            });
            Some(e)
        }
        Err(e) => {
            checks.push(Check { name: "envelope".into(), pass: false, detail: e.to_string() });
            None
        }
    };
    let trend = surface.as_ref().map(|sf| {
        let (c, d2) = (sf.fit.parameters[0], sf.fit.parameters[1]);
        checks.push(Check { name: "surface_positive".into(), pass: c > 0.0 && d2 > 0.0, detail: format!("C {c:.4} D2 {d2:.4}") });
        let t = residual_trend(sf);
        checks.push(Check {
            name: "surface_trend".into(),
            pass: t.decreasing,
            detail: format!("near {:.4} far {:.4}", t.near_mean, t.far_mean),
        });
        t
    });
    if a.check_mean_field {
        for (name, tol) in [("inverse_delta", a.delta_tolerance), ("tail_exponent", a.tail_tolerance)] {
            if let Some(v) = fits.iter().find_map(|f| f.get(name)) {
                let r = reference_value(name).unwrap_or(f64::NAN);
                checks.push(Check { name: name.into(), pass: (v - r).abs() <= tol, detail: format!("{v:.4} vs {r} ± {tol}") });
            }
        }
    }
    let mut rows = Vec::new();
    for f in &fits {
        for (i, n) in f.names.iter().enumerate() {
            let r = reference_value(n).map_or(String::new(), num);
            rows.push(vec![f.kind.clone(), n.clone(), num(f.parameters[i]), num(f.errors[i]), r]);
        }
    }
    w.csv("analysis.csv", &["fit", "parameter", "value", "error", "reference"], &rows)?;
    let pass = checks.iter().all(|c| c.pass);
    let summary = AnalysisSummary { p: mc.p, fits, errors, sandwich, envelope, residual_trend: trend, checks, pass };
    w.json("analysis.json", "analysis", &summary)?;
    Ok(pass)
}
