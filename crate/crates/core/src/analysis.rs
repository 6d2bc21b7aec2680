//! Exponent and amplitude fits to Monte Carlo tables, and the ISE two-point
//! function.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{dhat, LatticeSpec};
use crate::mc::{sample_rng, ObservableTable};
use crate::quadrature::{integrate, QuadratureError};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("singular design matrix")]
    Singular,
    #[error("non-finite value in {0}")]
    NotFinite(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Fit range in the fitted variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
}

impl FitWindow {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: String,
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    /// Bootstrap standard errors over batches; NaN without batches.
    pub errors: Vec<f64>,
    /// Weighted least-squares covariance.
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub window: FitWindow,
    pub points: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.parameters[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.errors[i])
    }

    fn check(self) -> Result<Self, AnalysisError> {
        if self.parameters.iter().chain(std::iter::once(&self.residual_norm)).all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(AnalysisError::NotFinite(self.kind))
        }
    }
}

/// Points y(x) with their per-batch replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_err: Vec<f64>,
    /// [batch][point]
    pub batches: Vec<Vec<f64>>,
    pub batch_counts: Vec<usize>,
}

impl Series {
    /// Noise-free data; fits use unit weights and report NaN errors.
    pub fn exact(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        Self { x, y, y_err: vec![0.0; n], batches: Vec::new(), batch_counts: Vec::new() }
    }

    /// M̂_h against h.
    pub fn magnetization(table: &ObservableTable) -> Self {
        Self {
            x: table.h_grid.clone(),
            y: table.magnetization.iter().map(|e| e.mean).collect(),
            y_err: table.magnetization.iter().map(|e| e.stderr).collect(),
            batches: table.batches.magnetization.clone(),
            batch_counts: table.batches.counts.clone(),
        }
    }

    /// χ̂_h against h.
    pub fn susceptibility(table: &ObservableTable) -> Self {
        Self {
            x: table.h_grid.clone(),
            y: table.susceptibility.iter().map(|e| e.mean).collect(),
            y_err: table.susceptibility.iter().map(|e| e.stderr).collect(),
            batches: table.batches.susceptibility.clone(),
            batch_counts: table.batches.counts.clone(),
        }
    }

    fn resample<R: Rng>(&self, rng: &mut R) -> Self {
        let b = self.batches.len();
        let picks: Vec<usize> = (0..b).map(|_| rng.gen_range(0..b)).collect();
        let total: f64 = picks.iter().map(|&i| self.batch_counts[i] as f64).sum();
        let y = (0..self.x.len()).map(|j| picks.iter().map(|&i| self.batches[i][j] * self.batch_counts[i] as f64).sum::<f64>() / total).collect();
        Self { x: self.x.clone(), y, y_err: self.y_err.clone(), batches: Vec::new(), batch_counts: Vec::new() }
    }
}

/// Resampling settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub replicas: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Self { replicas: 200, seed: 0x5eed }
    }
}

fn bootstrap_errors<F>(series: &Series, boot: Bootstrap, fit: F) -> Vec<f64>
where
    F: Fn(&Series) -> Option<Vec<f64>> + Sync,
{
    if series.batches.len() < 2 || boot.replicas < 2 {
        return Vec::new();
    }
    let reps: Vec<Vec<f64>> = (0..boot.replicas)
        .into_par_iter()
        .filter_map(|r| fit(&series.resample(&mut sample_rng(boot.seed, r as u64))))
        .collect();
    if reps.len() < 2 {
        return Vec::new();
    }
    let k = reps[0].len();
    (0..k)
        .map(|j| {
            let m = reps.iter().map(|r| r[j]).sum::<f64>() / reps.len() as f64;
            (reps.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt()
        })
        .collect()
}

fn pad(errors: Vec<f64>, k: usize) -> Vec<f64> {
    if errors.len() == k {
        errors
    } else {
        vec![f64::NAN; k]
    }
}

/// Weighted straight-line fit; returns (slope, intercept, covariance, rms residual).
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64, [[f64; 2]; 2], f64), AnalysisError> {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(AnalysisError::Singular);
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (c - intercept - slope * a).powi(2)).sum();
    let cov = [[1.0 / sxx, -mx / sxx], [-mx / sxx, 1.0 / sw + mx * mx / sxx]];
    Ok((slope, intercept, cov, (rss / x.len() as f64).sqrt()))
}

/// Log-log fit y = A x^s over the window, in ratios to the first point in
/// the window so that rescaling y by a power of two leaves s bit-identical.
fn power_law(series: &Series, window: FitWindow) -> Result<(f64, f64, [[f64; 2]; 2], f64, usize), AnalysisError> {
    let pts: Vec<usize> = (0..series.x.len()).filter(|&i| window.contains(series.x[i]) && series.y[i] > 0.0).collect();
    if pts.len() < 2 {
        return Err(AnalysisError::Insufficient("fewer than two positive points in the window".into()));
    }
    let (x0, y0) = (series.x[pts[0]], series.y[pts[0]]);
    let x: Vec<f64> = pts.iter().map(|&i| (series.x[i] / x0).ln()).collect();
    let y: Vec<f64> = pts.iter().map(|&i| (series.y[i] / y0).ln()).collect();
    let weighted = pts.iter().all(|&i| series.y_err[i] > 0.0);
    let w: Vec<f64> = pts.iter().map(|&i| if weighted { (series.y[i] / series.y_err[i]).powi(2) } else { 1.0 }).collect();
    let (slope, intercept, cov, rms) = weighted_line(&x, &y, &w)?;
    let amplitude = y0 * (intercept - slope * x0.ln()).exp();
    Ok((slope, amplitude, cov, rms, pts.len()))
}

/// Fits M̂_h ∝ h^{1/δ}; needs at least five h values spanning 1.5 decades.
pub fn fit_magnetization(series: &Series, window: FitWindow, boot: Bootstrap) -> Result<FitResult, AnalysisError> {
    let inside: Vec<f64> = series.x.iter().cloned().filter(|&h| window.contains(h) && h > 0.0).collect();
    if inside.len() < 5 {
        return Err(AnalysisError::Insufficient(format!("{} h values in the window, need 5", inside.len())));
    }
    let span = (inside.iter().cloned().fold(0.0, f64::max) / inside.iter().cloned().fold(f64::INFINITY, f64::min)).log10();
    if span < 1.5 - 1e-9 {
        return Err(AnalysisError::Insufficient(format!("h values span {span:.2} decades, need 1.5")));
    }
    let (slope, amplitude, cov, rms, n) = power_law(series, window)?;
    let errors = bootstrap_errors(series, boot, |s| power_law(s, window).ok().map(|r| vec![r.0, r.1]));
    FitResult {
        kind: "magnetization".into(),
        names: vec!["inverse_delta".into(), "amplitude".into()],
        parameters: vec![slope, amplitude],
        errors: pad(errors, 2),
        covariance: vec![cov[0].to_vec(), cov[1].to_vec()],
        residual_norm: rms,
        window,
        points: n,
    }
    .check()
}

/// Log-binned masses P(|C(0)| ∈ [n_low, n_high]) with per-batch replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailData {
    pub n_low: Vec<u64>,
    pub n_high: Vec<u64>,
    pub mass: Series,
}

impl TailData {
    pub fn from_table(table: &ObservableTable) -> Self {
        let probs = table.bin_probabilities();
        let n = probs.len();
        let b = table.batches.histogram.len();
        // Binomial-style error of each bin mass from the batch spread.
        let y_err = (0..n)
            .map(|j| {
                if b < 2 {
                    return 0.0;
                }
                let m = probs[j];
                let var = table.batches.histogram.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (b - 1) as f64;
                (var / b as f64).sqrt()
            })
            .collect();
        Self {
            n_low: table.histogram.iter().map(|h| h.n_low).collect(),
            n_high: table.histogram.iter().map(|h| h.n_high).collect(),
            mass: Series {
                x: table.histogram.iter().map(|h| h.n_low as f64).collect(),
                y: probs,
                y_err,
                batches: table.batches.histogram.clone(),
                batch_counts: table.batches.counts.clone(),
            },
        }
    }

    /// Bins from explicit masses without replicas.
    pub fn exact(n_low: Vec<u64>, n_high: Vec<u64>, mass: Vec<f64>) -> Self {
        let x = n_low.iter().map(|&n| n as f64).collect();
        Self { n_low, n_high, mass: Series::exact(x, mass) }
    }
}

/// Σ_{n=a}^{b} n^{−τ}; Euler–Maclaurin beyond 64 terms.
pub fn power_sum(a: u64, b: u64, tau: f64) -> f64 {
    if b < a {
        return 0.0;
    }
    if b - a < 64 || a < 64 {
        let direct_end = if b - a < 64 { b } else { a.max(64) - 1 };
        let head: f64 = (a..=direct_end).map(|n| (n as f64).powf(-tau)).sum();
        return head + if direct_end < b { power_sum(direct_end + 1, b, tau) } else { 0.0 };
    }
    let (x, y) = (a as f64, b as f64);
    let f = |n: f64| n.powf(-tau);
    let f1 = |n: f64| -tau * n.powf(-tau - 1.0);
    let f3 = |n: f64| -tau * (tau + 1.0) * (tau + 2.0) * n.powf(-tau - 3.0);
    let integral = if (tau - 1.0).abs() < 1e-12 { (y / x).ln() } else { (y.powf(1.0 - tau) - x.powf(1.0 - tau)) / (1.0 - tau) };
    integral + 0.5 * (f(x) + f(y)) + (f1(y) - f1(x)) / 12.0 - (f3(y) - f3(x)) / 720.0
}

fn tail_fit(data: &TailData, y: &[f64], y_err: &[f64], window: FitWindow) -> Result<(f64, f64, f64, f64, usize), AnalysisError> {
    let bins: Vec<usize> = (0..data.n_low.len())
        .filter(|&j| window.contains(data.n_low[j] as f64) && window.contains(data.n_high[j] as f64) && y[j] > 0.0)
        .collect();
    if bins.len() < 3 {
        return Err(AnalysisError::Insufficient(format!("{} non-empty bins inside the window, need 3", bins.len())));
    }
    let weighted = bins.iter().all(|&j| y_err[j] > 0.0);
    let w: Vec<f64> = bins.iter().map(|&j| if weighted { (y[j] / y_err[j]).powi(2) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let ly: Vec<f64> = bins.iter().map(|&j| y[j].ln()).collect();
    let objective = |tau: f64| {
        let ls: Vec<f64> = bins.iter().map(|&j| power_sum(data.n_low[j], data.n_high[j], tau).ln()).collect();
        let la = ly.iter().zip(&ls).zip(&w).map(|((a, b), c)| c * (a - b)).sum::<f64>() / sw;
        let q: f64 = ly.iter().zip(&ls).zip(&w).map(|((a, b), c)| c * (a - la - b).powi(2)).sum();
        (q, la)
    };
    // Golden-section search on τ ∈ [0.5, 4].
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.5, 4.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (objective(c).0, objective(d).0);
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d).0;
        }
    }
    let tau = 0.5 * (a + b);
    let (q, la) = objective(tau);
    // Curvature of the objective gives the WLS variance.
    let e = 1e-4;
    let curv = (objective(tau + e).0 - 2.0 * q + objective(tau - e).0) / (e * e);
    let var = if curv > 0.0 { 2.0 / curv } else { f64::NAN };
    Ok((tau, la.exp(), var, (q / bins.len() as f64).sqrt(), bins.len()))
}

/// Fits P(|C(0)| = n) ∝ n^{−τ} to bin masses fully inside the window; the
/// histogram must reach three decades.
pub fn fit_cluster_tail(data: &TailData, window: FitWindow, boot: Bootstrap) -> Result<FitResult, AnalysisError> {
    let reach = data.n_high.iter().zip(&data.mass.y).filter(|(_, &m)| m > 0.0).map(|(&n, _)| n).max().unwrap_or(0);
    if (reach as f64) < 1000.0 {
        return Err(AnalysisError::Insufficient(format!("histogram reaches n = {reach}, need three decades")));
    }
    let (tau, amp, var, rms, n) = tail_fit(data, &data.mass.y, &data.mass.y_err, window)?;
    let errors = bootstrap_errors(&data.mass, boot, |s| tail_fit(data, &s.y, &data.mass.y_err, window).ok().map(|r| vec![r.0, r.1]));
    FitResult {
        kind: "cluster_tail".into(),
        names: vec!["tail_exponent".into(), "amplitude".into()],
        parameters: vec![tau, amp],
        errors: pad(errors, 2),
        covariance: vec![vec![var, f64::NAN], vec![f64::NAN, f64::NAN]],
        residual_norm: rms,
        window,
        points: n,
    }
    .check()
}

/// The field coefficient 2^{3/2} of the scaling form.
pub const FIELD_COEFFICIENT: f64 = 2.828_427_124_746_190_3;

/// τ̂ values on a (k, h) grid with the effective k² of each wave vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceData {
    /// σ²-corrected 2d(1 − D̂(k)) per wave vector.
    pub q: Vec<f64>,
    /// 1 − D̂(k) per wave vector.
    pub one_minus_dhat: Vec<f64>,
    pub h: Vec<f64>,
    /// τ̂ [h][k] as a flattened series with x = h·|k| + k.
    pub tau: Series,
}

impl SurfaceData {
    pub fn from_table(lattice: &LatticeSpec, table: &ObservableTable) -> Self {
        let q = table.k_list.iter().map(|k| lattice.effective_k2(k)).collect();
        let one_minus_dhat = table.k_list.iter().map(|k| 1.0 - dhat(lattice, k)).collect();
        let y: Vec<f64> = table.tau.iter().flat_map(|r| r.iter().map(|e| e.mean)).collect();
        let y_err = table.tau.iter().flat_map(|r| r.iter().map(|e| e.stderr)).collect();
        Self {
            q,
            one_minus_dhat,
            h: table.h_grid.clone(),
            tau: Series {
                x: (0..y.len()).map(|i| i as f64).collect(),
                y,
                y_err,
                batches: table.batches.tau.clone(),
                batch_counts: table.batches.counts.clone(),
            },
        }
    }

    pub fn exact(q: Vec<f64>, h: Vec<f64>, tau: Vec<f64>) -> Self {
        let n = tau.len();
        let one_minus_dhat = q.clone();
        Self { q, one_minus_dhat, h, tau: Series::exact((0..n).map(|i| i as f64).collect(), tau) }
    }

    /// (point index, q, h) for points with h in the window and q ≤ q_max,
    /// excluding q = h = 0.
    pub fn points(&self, window: FitWindow, q_max: f64) -> Vec<(usize, f64, f64)> {
        let nk = self.q.len();
        let mut out = Vec::new();
        for (i, &h) in self.h.iter().enumerate() {
            if !window.contains(h) {
                continue;
            }
            for (j, &q) in self.q.iter().enumerate() {
                if q <= q_max && (q > 0.0 || h > 0.0) {
                    out.push((i * nk + j, q, h));
                }
            }
        }
        out
    }
}

/// Fitted surface τ̂ ≈ C/(D² q + 2^{3/2} √h) with per-point relative residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFit {
    pub fit: FitResult,
    /// (q, h, τ̂/model − 1) per fitted point.
    pub residuals: Vec<(f64, f64, f64)>,
}

fn surface_core(points: &[(usize, f64, f64)], y: &[f64], y_err: &[f64]) -> Result<(f64, f64, [[f64; 2]; 2], Vec<f64>), AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::Insufficient("need at least three surface points".into()));
    }
    let weighted = points.iter().all(|&(i, _, _)| y_err[i] > 0.0);
    // Linear start: 1/τ̂ = α q + β √h.
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, q, h) in points {
        let t = y[i];
        if !(t > 0.0) {
            return Err(AnalysisError::NotFinite("surface data".into()));
        }
        let w = if weighted { (t * t / y_err[i]).powi(2) } else { 1.0 };
        let (u, v) = (q, h.sqrt());
        a11 += w * u * u;
        a12 += w * u * v;
        a22 += w * v * v;
        b1 += w * u / t;
        b2 += w * v / t;
    }
    let det = a11 * a22 - a12 * a12;
    if !(det.abs() > 1e-14 * (a11 * a22).abs().max(1e-300)) {
        return Err(AnalysisError::Singular);
    }
    let alpha = (b1 * a22 - b2 * a12) / det;
    let beta = (a11 * b2 - a12 * b1) / det;
    let mut c = FIELD_COEFFICIENT / beta;
    let mut d2 = alpha * c;
    // Gauss–Newton on τ̂ = C/(D² q + c₀√h).
    let mut cov = [[0.0; 2]; 2];
    for _ in 0..100 {
        let (mut j11, mut j12, mut j22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(i, q, h) in points {
            let den = d2 * q + FIELD_COEFFICIENT * h.sqrt();
            let model = c / den;
            let w = if weighted { 1.0 / y_err[i].powi(2) } else { 1.0 / y[i].powi(2) };
            let dc = 1.0 / den;
            let dd = -c * q / (den * den);
            let r = y[i] - model;
            j11 += w * dc * dc;
            j12 += w * dc * dd;
            j22 += w * dd * dd;
            g1 += w * dc * r;
            g2 += w * dd * r;
        }
        let det = j11 * j22 - j12 * j12;
        if !(det.abs() > 0.0) {
            return Err(AnalysisError::Singular);
        }
        cov = [[j22 / det, -j12 / det], [-j12 / det, j11 / det]];
        let sc = (j22 * g1 - j12 * g2) / det;
        let sd = (j11 * g2 - j12 * g1) / det;
        c += sc;
        d2 += sd;
        if sc.abs() <= 1e-13 * c.abs() && sd.abs() <= 1e-13 * d2.abs().max(1e-300) {
            break;
        }
    }
    let residuals = points.iter().map(|&(i, q, h)| y[i] * (d2 * q + FIELD_COEFFICIENT * h.sqrt()) / c - 1.0).collect();
    Ok((c, d2, cov, residuals))
}

/// Fits the τ̂ surface over h in the window and wave vectors with q ≤ q_max.
pub fn fit_tau_surface(data: &SurfaceData, window: FitWindow, q_max: f64, boot: Bootstrap) -> Result<SurfaceFit, AnalysisError> {
    let points = data.points(window, q_max);
    let (c, d2, cov, eps) = surface_core(&points, &data.tau.y, &data.tau.y_err)?;
    let errors = bootstrap_errors(&data.tau, boot, |s| surface_core(&points, &s.y, &data.tau.y_err).ok().map(|r| vec![r.0, r.1]));
    let rms = (eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64).sqrt();
    let fit = FitResult {
        kind: "tau_surface".into(),
        names: vec!["C".into(), "D2".into()],
        parameters: vec![c, d2],
        errors: pad(errors, 2),
        covariance: vec![cov[0].to_vec(), cov[1].to_vec()],
        residual_norm: rms,
        window,
        points: points.len(),
    }
    .check()?;
    let residuals = points.iter().zip(&eps).map(|(&(_, q, h), &e)| (q, h, e)).collect();
    Ok(SurfaceFit { fit, residuals })
}

/// Whether |ε| shrinks toward (k, h) = (0, 0): points are ordered by the
/// scaling variable q + 2^{3/2}√h and the nearer half compared with the farther.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTrend {
    pub near_mean: f64,
    pub far_mean: f64,
    /// Spearman correlation between distance and |ε|.
    pub spearman: f64,
    pub decreasing: bool,
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn residual_trend(fit: &SurfaceFit) -> ResidualTrend {
    let dist: Vec<f64> = fit.residuals.iter().map(|&(q, h, _)| q + FIELD_COEFFICIENT * h.sqrt()).collect();
    let abs: Vec<f64> = fit.residuals.iter().map(|r| r.2.abs()).collect();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
    let half = order.len() / 2;
    let mean = |ix: &[usize]| ix.iter().map(|&i| abs[i]).sum::<f64>() / ix.len().max(1) as f64;
    let near_mean = mean(&order[..half]);
    let far_mean = mean(&order[half..]);
    let (rd, ra) = (ranks(&dist), ranks(&abs));
    let n = rd.len() as f64;
    let (md, ma) = (rd.iter().sum::<f64>() / n, ra.iter().sum::<f64>() / n);
    let cov: f64 = rd.iter().zip(&ra).map(|(a, b)| (a - md) * (b - ma)).sum();
    let sd = rd.iter().map(|a| (a - md).powi(2)).sum::<f64>().sqrt() * ra.iter().map(|b| (b - ma).powi(2)).sum::<f64>().sqrt();
    let spearman = if sd > 0.0 { cov / sd } else { 0.0 };
    ResidualTrend { near_mean, far_mean, spearman, decreasing: near_mean < far_mean }
}

/// Envelope constants of K₁e^{−h}/(1 − D̂ + √(1−e^{−h})) ≤ τ̂ ≤ K₂/(1 − D̂ + √(1−e^{−h})).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub k1: f64,
    pub k2: f64,
    /// Validation points outside [K₁, K₂] by more than three standard errors.
    pub outside: usize,
    pub validated: usize,
    pub pass: bool,
}

/// Calibrates K₁ (min) and K₂ (max) of the scaled ratio on even-indexed h
/// values and checks odd-indexed ones against them at 3σ.
pub fn envelope_check(data: &SurfaceData, window: FitWindow, q_max: f64) -> Result<EnvelopeCheck, AnalysisError> {
    let nk = data.q.len();
    let pts = data.points(window, q_max);
    let mut hs: Vec<f64> = pts.iter().map(|p| p.2).collect();
    hs.dedup();
    let scaled = |i: usize| {
        let (hi, ki) = (i / nk, i % nk);
        let h = data.h[hi];
        let g = data.one_minus_dhat[ki] + (-(-h).exp_m1()).sqrt();
        (data.tau.y[i] * g, data.tau.y_err[i] * g, (-h).exp())
    };
    let (mut k1, mut k2) = (f64::INFINITY, 0.0f64);
    let (mut cal, mut val) = (Vec::new(), Vec::new());
    for &(i, _, h) in &pts {
        let rank = hs.iter().position(|&x| x == h).unwrap_or(0);
        if rank % 2 == 0 {
            cal.push(i)
        } else {
            val.push(i)
        }
    }
    if cal.is_empty() || val.is_empty() {
        return Err(AnalysisError::Insufficient("need at least two h values for calibration and validation".into()));
    }
    for &i in &cal {
        let (r, _, e) = scaled(i);
        k1 = k1.min(r / e);
        k2 = k2.max(r);
    }
    let mut outside = 0;
    for &i in &val {
        let (r, s, e) = scaled(i);
        if r + 3.0 * s < k1 * e || r - 3.0 * s > k2 {
            outside += 1;
        }
    }
    Ok(EnvelopeCheck { k1, k2, outside, validated: val.len(), pass: k1 > 0.0 && k1 < k2 && outside == 0 })
}

/// One row of the bounds e^{−h}(1 − p)^{|Ω|} ≤ 1 − M_h ≤ e^{−h}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub h: f64,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub stderr: f64,
    pub inside: bool,
}

pub fn magnetization_sandwich(table: &ObservableTable, p: f64, omega: usize, sigmas: f64) -> Vec<SandwichRow> {
    table
        .h_grid
        .iter()
        .zip(&table.magnetization)
        .map(|(&h, m)| {
            let upper = (-h).exp();
            let lower = upper * (1.0 - p).powi(omega as i32);
            let value = 1.0 - m.mean;
            let s = sigmas * m.stderr;
            SandwichRow { h, lower, value, upper, stderr: m.stderr, inside: value <= upper + s && value >= lower - s }
        })
        .collect()
}

fn eta_core(data: &SurfaceData, row: usize, q_max: f64, y: &[f64]) -> Result<(f64, f64, f64, usize), AnalysisError> {
    let nk = data.q.len();
    let t0 = y[row * nk];
    let mut x = Vec::new();
    let mut z = Vec::new();
    for (j, &q) in data.q.iter().enumerate() {
        let t = y[row * nk + j];
        if q > 0.0 && q <= q_max && t > 0.0 && 1.0 / t > 1.0 / t0 {
            x.push(q.ln());
            z.push((1.0 / t - 1.0 / t0).ln());
        }
    }
    if data.q.first() != Some(&0.0) || !(t0 > 0.0) {
        return Err(AnalysisError::Insufficient("the first wave vector must be k = 0".into()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::Insufficient(format!("{} usable wave vectors, need 2", x.len())));
    }
    let w = vec![1.0; x.len()];
    let (slope, _, cov, rms) = weighted_line(&x, &z, &w)?;
    Ok((2.0 - 2.0 * slope, slope, 4.0 * cov[0][0] * rms * rms, x.len()))
}

/// η from the shape of τ̂ at field `h[row]`: 1/τ̂(k) − 1/τ̂(0) ∝ q^{1−η/2}
/// over wave vectors with 0 < q ≤ q_max.
pub fn fit_eta(data: &SurfaceData, row: usize, q_max: f64, boot: Bootstrap) -> Result<FitResult, AnalysisError> {
    if row >= data.h.len() {
        return Err(AnalysisError::Insufficient(format!("no field index {row}")));
    }
    let (eta, slope, var, n) = eta_core(data, row, q_max, &data.tau.y)?;
    let errors = bootstrap_errors(&data.tau, boot, |s| eta_core(data, row, q_max, &s.y).ok().map(|r| vec![r.0, r.1]));
    let h = data.h[row];
    FitResult {
        kind: "eta".into(),
        names: vec!["eta".into(), "slope".into()],
        parameters: vec![eta, slope],
        errors: pad(errors, 2),
        covariance: vec![vec![var, f64::NAN], vec![f64::NAN, var / 4.0]],
        residual_norm: 0.0,
        window: FitWindow::new(h, h),
        points: n,
    }
    .check()
}

/// χ̂_h √h against the amplitude 2^{−3/2} C at each h.
pub fn chi_amplitude(table: &ObservableTable, c: f64) -> Vec<(f64, f64, f64)> {
    let target = c / FIELD_COEFFICIENT;
    table.h_grid.iter().zip(&table.susceptibility).map(|(&h, e)| (h, e.mean * h.sqrt(), target)).collect()
}

/// Â(k) = ∫_0^∞ t e^{−t²/2} e^{−k²t/2} dt by adaptive quadrature.
pub fn ise_two_point(k: f64) -> Result<f64, AnalysisError> {
    let a = 0.5 * k * k;
    let f = |t: f64| t * (-0.5 * t * t - a * t).exp();
    // Break points on the scale of the peak, up to where the integrand is negligible.
    let end = if a > 0.0 { (60.0 / a).min(40.0) } else { 40.0 };
    let mut breaks = vec![0.0];
    let mut b = (1.0 / (1.0 + a)).min(end);
    while b < end {
        breaks.push(b);
        b *= 4.0;
    }
    breaks.push(end);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += integrate(f, w[0], w[1], 0.0, 1e-13, 500)?.value;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IseCurve {
    pub k: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn ise_curve(k: &[f64]) -> Result<IseCurve, AnalysisError> {
    Ok(IseCurve { k: k.to_vec(), values: k.iter().map(|&x| ise_two_point(x)).collect::<Result<_, _>>()? })
}
