//! Fourier-space diagrams: polygons, the triangle, the square with one
//! massive line, and the reference integrals I_{m,n}^{(d)}(h).

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::lattice::{dhat, fourier_grid, LatticeSpec, TorusIndexer};
use crate::quadrature::{integrate, QuadratureError};

#[derive(Debug, Error, PartialEq)]
pub enum DiagramError {
    #[error("propagator grids live on different lattices or fields")]
    MismatchedGrids,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension {0} is not above 6")]
    DimensionTooLow(usize),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Where a propagator grid came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PropagatorSource {
    Measured { samples: usize },
    /// 1/(1 − pΩ D̂(k) + c√h).
    MeanFieldProxy { p_omega: f64, c: f64 },
    Explicit,
}

/// τ̂_h(k) on the torus momenta, in site-index order of the mode labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorGrid {
    pub lattice: LatticeSpec,
    pub h: f64,
    pub values: Vec<f64>,
    /// τ̂(0); infinite when the proxy's zero mode is dropped.
    pub chi: f64,
    pub source: PropagatorSource,
}

/// In-place d-dimensional DFT over a torus of side `side`, first axis fastest.
/// `sign = +1` computes Σ_x f(x) e^{+ik·x}; `sign = −1` the conjugate sum.
pub fn torus_dft(data: &mut [Complex64], side: usize, dimension: usize, sign: i32) {
    let mut planner = FftPlanner::new();
    let fft = if sign > 0 { planner.plan_fft_inverse(side) } else { planner.plan_fft_forward(side) };
    let mut line = vec![Complex64::new(0.0, 0.0); side];
    let mut stride = 1;
    for _ in 0..dimension {
        let block = stride * side;
        for start in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[start + off + j * stride];
                }
                fft.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    data[start + off + j * stride] = *l;
                }
            }
        }
        stride = block;
    }
}

fn to_momentum(spec: &LatticeSpec, x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    torus_dft(&mut buf, spec.torus_side, spec.dimension, 1);
    buf.iter().map(|c| c.re).collect()
}

fn to_position(spec: &LatticeSpec, k: &[Complex64]) -> Vec<f64> {
    let mut buf = k.to_vec();
    torus_dft(&mut buf, spec.torus_side, spec.dimension, -1);
    let v = buf.len() as f64;
    buf.iter().map(|c| c.re / v).collect()
}

impl PropagatorGrid {
    /// Mean-field proxy 1/(1 − pΩ D̂(k) + c√h). At pΩ = 1 and h = 0 the k = 0
    /// mode is infinite and is set to zero.
    pub fn proxy(lattice: &LatticeSpec, h: f64, p_omega: f64, c: f64) -> Result<Self, DiagramError> {
        if !(0.0..=1.0).contains(&p_omega) || !(h >= 0.0) || !(c > 0.0) {
            return Err(DiagramError::Invalid("need 0 ≤ pΩ ≤ 1, h ≥ 0, c > 0".into()));
        }
        let mass = c * h.sqrt();
        let values: Vec<f64> = fourier_grid::<f64>(lattice)
            .iter()
            .map(|k| {
                let den = 1.0 - p_omega * dhat(lattice, k) + mass;
                if den <= 1e-15 {
                    0.0
                } else {
                    1.0 / den
                }
            })
            .collect();
        let den0 = 1.0 - p_omega + mass;
        let chi = if den0 <= 1e-15 { f64::INFINITY } else { 1.0 / den0 };
        Ok(Self { lattice: *lattice, h, values, chi, source: PropagatorSource::MeanFieldProxy { p_omega, c } })
    }

    /// From a position-space two-point function τ(0, x) indexed by site.
    pub fn from_position(lattice: &LatticeSpec, h: f64, tau: &[f64], source: PropagatorSource) -> Result<Self, DiagramError> {
        if tau.len() != lattice.volume() || tau.iter().any(|t| !t.is_finite()) {
            return Err(DiagramError::Invalid("two-point values must be finite, one per site".into()));
        }
        let values = to_momentum(lattice, tau);
        Ok(Self { lattice: *lattice, h, chi: values[0], values, source })
    }

    pub fn from_momentum(lattice: &LatticeSpec, h: f64, values: Vec<f64>, source: PropagatorSource) -> Result<Self, DiagramError> {
        if values.len() != lattice.volume() || values.iter().any(|t| !t.is_finite()) {
            return Err(DiagramError::Invalid("momentum values must be finite, one per mode".into()));
        }
        Ok(Self { lattice: *lattice, h, chi: values[0], values, source })
    }

    pub fn volume(&self) -> usize {
        self.values.len()
    }

    /// τ(0, x) by inverse transform.
    pub fn position(&self) -> Vec<f64> {
        let k: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        to_position(&self.lattice, &k)
    }

    /// τ(0, 0) = V⁻¹ Σ_k τ̂(k).
    pub fn at_origin(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.volume() as f64
    }
}

/// A diagram as a function of x, with its supremum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramField {
    pub values: Vec<f64>,
    pub sup: f64,
}

impl DiagramField {
    fn new(values: Vec<f64>) -> Self {
        let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self { values, sup }
    }
}

/// P^{(m)}(x) = τ^{*m}(x) − δ_{0,x} τ(0,0)^m.
pub fn polygon(grid: &PropagatorGrid, m: u32) -> Result<DiagramField, DiagramError> {
    if m < 2 {
        return Err(DiagramError::Invalid("polygon needs m ≥ 2".into()));
    }
    let k: Vec<Complex64> = grid.values.iter().map(|&v| Complex64::new(v.powi(m as i32), 0.0)).collect();
    let mut values = to_position(&grid.lattice, &k);
    values[0] -= grid.at_origin().powi(m as i32);
    Ok(DiagramField::new(values))
}

/// ∇ = (τ^{*3})(0) = V⁻¹ Σ_k τ̂(k)³.
pub fn triangle(grid: &PropagatorGrid) -> f64 {
    grid.values.iter().map(|v| v.powi(3)).sum::<f64>() / grid.volume() as f64
}

/// W^{(m)}(x) = Σ_y |y|² τ(0, y) τ^{*(m−1)}(x − y), with |y| the minimal-image norm.
pub fn weighted_polygon(grid: &PropagatorGrid, m: u32) -> Result<DiagramField, DiagramError> {
    if m < 2 {
        return Err(DiagramError::Invalid("weighted polygon needs m ≥ 2".into()));
    }
    let idx = TorusIndexer::new(&grid.lattice);
    let tau = grid.position();
    let weighted: Vec<f64> = tau.iter().enumerate().map(|(y, t)| idx.min_image_norm2(0, y) as f64 * t).collect();
    let g = to_momentum(&grid.lattice, &weighted);
    let k: Vec<Complex64> = g.iter().zip(&grid.values).map(|(&a, &t)| Complex64::new(a * t.powi(m as i32 - 1), 0.0)).collect();
    Ok(DiagramField::new(to_position(&grid.lattice, &k)))
}

/// S_h = V⁻¹ Σ_k τ̂_h(k) τ̂_0(k)³.
pub fn square_one_massive(grid_h: &PropagatorGrid, grid_0: &PropagatorGrid) -> Result<f64, DiagramError> {
    if grid_h.lattice != grid_0.lattice || grid_h.volume() != grid_0.volume() {
        return Err(DiagramError::MismatchedGrids);
    }
    Ok(grid_h.values.iter().zip(&grid_0.values).map(|(a, b)| a * b.powi(3)).sum::<f64>() / grid_h.volume() as f64)
}

/// A torus quantity at side s and 2s; the difference estimates finite-size error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteSizePair {
    pub side: usize,
    pub value: f64,
    pub doubled: f64,
}

impl FiniteSizePair {
    pub fn error(&self) -> f64 {
        (self.doubled - self.value).abs()
    }
}

pub fn finite_size_pair<F: Fn(&LatticeSpec) -> Result<f64, DiagramError>>(spec: &LatticeSpec, f: F) -> Result<FiniteSizePair, DiagramError> {
    let mut doubled = *spec;
    doubled.torus_side *= 2;
    Ok(FiniteSizePair { side: spec.torus_side, value: f(spec)?, doubled: f(&doubled)? })
}

/// e^{−x} I₀(x).
pub fn scaled_bessel_i0(x: f64) -> f64 {
    if x < 0.0 {
        return scaled_bessel_i0(-x) * (2.0 * x).exp();
    }
    if x <= 60.0 {
        // Trapezoid rule on the periodic integrand; spectrally accurate.
        let n = 160;
        (0..n).map(|j| (x * ((2.0 * PI * j as f64 / n as f64).cos() - 1.0)).exp()).sum::<f64>() / n as f64
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..12 {
            let odd = (2 * k - 1) as f64;
            term *= odd * odd / (k as f64 * 8.0 * x);
            sum += term;
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// ∫ d^dk/(2π)^d e^{−u(1 − D̂(k))} for the nearest-neighbour model.
pub fn heat_kernel_nn(d: usize, u: f64) -> f64 {
    scaled_bessel_i0(u / d as f64).powi(d as i32)
}

/// (1 − y + y²/2 − e^{−y}), accurate for small y.
fn phi3(y: f64) -> f64 {
    if y < 0.5 {
        let mut term = y * y * y / 6.0;
        let mut sum = 0.0;
        for k in 4..30 {
            sum += term;
            term *= -y / k as f64;
        }
        sum
    } else {
        1.0 - y + 0.5 * y * y - (-y).exp()
    }
}

/// ∫_0^∞ du K(u) w(u) over u = e^t, with a power-law tail beyond the last point.
fn schwinger<W: Fn(f64) -> f64>(d: usize, weight: W, scale: f64) -> Result<f64, DiagramError> {
    let f = |u: f64| heat_kernel_nn(d, u) * weight(u) * u;
    let t_lo = (1e-8f64).ln();
    let t_hi = (1e5f64.max(1e4 * scale)).ln();
    let mut breaks = vec![t_lo];
    let mut t = t_lo;
    while t < t_hi {
        t = (t + 2.0).min(t_hi);
        breaks.push(t);
    }
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += integrate(|t| f(t.exp()), w[0], w[1], 0.0, 1e-11, 400)?.value;
    }
    let u1 = t_hi.exp();
    let (f1, f2) = (f(u1), f(u1 * 1.01));
    if f1 <= 0.0 || f2 <= 0.0 || f1 < 1e-300 {
        return Ok(total);
    }
    let a = -(f2.ln() - f1.ln()) / 1.01f64.ln();
    if a <= 0.0 {
        return Err(DiagramError::Invalid("Schwinger integrand does not decay".into()));
    }
    Ok(total + f(u1) / a)
}

/// Infinite-volume square with one massive line for the nearest-neighbour
/// proxy at criticality: ∫ dk/(2π)^d [1 − D̂ + c√h]⁻¹ [1 − D̂]⁻³.
pub fn proxy_square(d: usize, c: f64, h: f64) -> Result<f64, DiagramError> {
    if d <= 6 {
        return Err(DiagramError::DimensionTooLow(d));
    }
    let g = c * h.sqrt();
    if g == 0.0 {
        if d <= 8 {
            return Ok(f64::INFINITY);
        }
        return schwinger(d, |u| u * u * u / 6.0, 1.0);
    }
    schwinger(d, |u| phi3(g * u) / (g * g * g), 1.0 / g)
}

/// Infinite-volume triangle ∫ dk/(2π)^d [1 − pΩ D̂]⁻³ for the nearest-neighbour proxy.
pub fn proxy_triangle(d: usize, p_omega: f64) -> Result<f64, DiagramError> {
    if d <= 6 && p_omega >= 1.0 {
        return Ok(f64::INFINITY);
    }
    if !(0.0..=1.0).contains(&p_omega) {
        return Err(DiagramError::Invalid("need 0 ≤ pΩ ≤ 1".into()));
    }
    // 1 − pΩD̂ = (1 − pΩ) + pΩ(1 − D̂): rescale u by pΩ.
    let gap = 1.0 - p_omega;
    let scale = if gap > 0.0 { 1.0 / gap } else { 1.0 };
    if p_omega == 0.0 {
        return Ok(1.0);
    }
    let v = schwinger(d, |u| 0.5 * u * u * (-gap * u / p_omega).exp(), scale)?;
    Ok(v / p_omega.powi(3))
}

/// The (m, n, d, h) of I_{m,n}^{(d)}(h) = ∫_{[−π,π]^d} d^dk (k² + √h)^{−m} (k²)^{−n}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralSpec {
    pub m: f64,
    pub n: f64,
    pub d: usize,
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum IntegralValue {
    Finite { value: f64, error: f64 },
    Divergent,
}

impl IntegralValue {
    pub fn value(&self) -> Option<f64> {
        match *self {
            IntegralValue::Finite { value, .. } => Some(value),
            IntegralValue::Divergent => None,
        }
    }
}

/// Small-h behaviour of I_{m,n}^{(d)}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum IntegralScaling {
    Divergent,
    Power(f64),
    Log,
    Constant,
}

pub fn expected_scaling(m: f64, n: f64, d: usize) -> IntegralScaling {
    let d = d as f64;
    if d <= 2.0 * n {
        IntegralScaling::Divergent
    } else if d < 2.0 * (n + m) {
        IntegralScaling::Power((d - 2.0 * (m + n)) / 4.0)
    } else if d == 2.0 * (n + m) && m > 0.0 {
        IntegralScaling::Log
    } else {
        IntegralScaling::Constant
    }
}

/// Surface area of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
}

fn halton(index: u64, base: u64) -> f64 {
    let (mut f, mut r, mut i) = (1.0, 0.0, index);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

/// ∫ over the cube outside the inscribed ball: exact volume times a
/// quasi-random mean, doubling the point count until two estimates agree.
fn corner<F: Fn(f64) -> f64>(d: usize, f: F, rel_tol: f64) -> Result<(f64, f64), DiagramError> {
    if d > PRIMES.len() {
        return Err(DiagramError::Invalid(format!("corner sampling supports d ≤ {}", PRIMES.len())));
    }
    let volume = (2.0 * PI).powi(d as i32) - sphere_area(d) * PI.powi(d as i32) / d as f64;
    let (mut sum, mut hits, mut next) = (0.0, 0u64, 1u64);
    let mut previous: Option<f64> = None;
    let mut n = 1u64 << 12;
    let mut k = vec![0.0; d];
    loop {
        while next <= n {
            for (j, kj) in k.iter_mut().enumerate() {
                *kj = PI * (2.0 * halton(next, PRIMES[j]) - 1.0);
            }
            next += 1;
            let k2: f64 = k.iter().map(|x| x * x).sum();
            if k2 > PI * PI {
                sum += f(k2);
                hits += 1;
            }
        }
        let mean = if hits == 0 { 0.0 } else { sum / hits as f64 };
        if let Some(p) = previous {
            let err = (mean - p).abs() * volume;
            if (mean - p).abs() <= rel_tol * mean.abs() || n >= 1 << 21 {
                return Ok((mean * volume, err));
            }
        }
        previous = Some(mean);
        n *= 2;
    }
}

/// I_{m,n}^{(d)}(h) as radial quadrature over the ball |k| ≤ π plus the
/// remaining cube corners.
pub fn reference_integral(spec: &IntegralSpec) -> Result<IntegralValue, DiagramError> {
    let IntegralSpec { m, n, d, h } = *spec;
    if !(m >= 0.0 && n >= 0.0 && h >= 0.0) || d == 0 {
        return Err(DiagramError::Invalid("need m, n, h ≥ 0 and d ≥ 1".into()));
    }
    let df = d as f64;
    let total = m + n;
    if df <= 2.0 * n || (h == 0.0 && df <= 2.0 * total) {
        return Ok(IntegralValue::Divergent);
    }
    let rh = h.sqrt();
    let f = |k2: f64| (k2 + rh).powf(-m) * k2.powf(-n);
    // Radial part in t = ln k; below k0 the integrand is a pure power.
    let scale = if h > 0.0 { rh.sqrt().min(1.0) } else { 1.0 };
    let k0 = 1e-4 * scale;
    let low_power = if h > 0.0 { df - 2.0 * n } else { df - 2.0 * total };
    let low_coef = if h > 0.0 { rh.powf(-m) } else { 1.0 };
    let omega = sphere_area(d);
    let head = omega * low_coef * k0.powf(low_power) / low_power;
    let g = |t: f64| {
        let k = t.exp();
        omega * k.powi(d as i32) * f(k * k)
    };
    let mut breaks = vec![k0.ln()];
    if scale < 1.0 {
        breaks.push(scale.ln());
    }
    breaks.push(PI.ln());
    let mut ball = 0.0;
    let mut err = 0.0;
    for w in breaks.windows(2) {
        let q = integrate(g, w[0], w[1], 0.0, 1e-12, 2000)?;
        ball += q.value;
        err += q.error;
    }
    let (c, cerr) = corner(d, f, 1e-5)?;
    Ok(IntegralValue::Finite { value: head + ball + c, error: err + cerr })
}

/// Log-log least-squares fit of I(h) over a log-spaced h range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub h: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_exponent(m: f64, n: f64, d: usize, h_min: f64, h_max: f64, points: usize) -> Result<ExponentFit, DiagramError> {
    if !(h_min > 0.0 && h_max > h_min) || points < 2 {
        return Err(DiagramError::Invalid("need 0 < h_min < h_max and at least two points".into()));
    }
    let h: Vec<f64> = (0..points).map(|i| h_min * (h_max / h_min).powf(i as f64 / (points - 1) as f64)).collect();
    let values = h
        .iter()
        .map(|&h| match reference_integral(&IntegralSpec { m, n, d, h })? {
            IntegralValue::Finite { value, .. } => Ok(value),
            IntegralValue::Divergent => Err(DiagramError::Invalid("integral diverges".into())),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (slope, intercept) = least_squares(&x, &y);
    Ok(ExponentFit { h, values, slope, intercept })
}

/// Slope and intercept of the ordinary least-squares line.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// The rate h^{δ(d)} bounding S_h M_h.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaExponent {
    pub power: f64,
    pub log: bool,
}

pub fn delta_exponent(d: usize) -> Result<DeltaExponent, DiagramError> {
    match d {
        0..=6 => Err(DiagramError::DimensionTooLow(d)),
        7 => Ok(DeltaExponent { power: (d as f64 - 6.0) / 4.0, log: false }),
        8 => Ok(DeltaExponent { power: 0.5, log: true }),
        _ => Ok(DeltaExponent { power: 0.5, log: false }),
    }
}

impl DeltaExponent {
    /// h^power |log h|^{log}.
    pub fn rate(&self, h: f64) -> f64 {
        let r = h.powf(self.power);
        if self.log {
            r * h.ln().abs()
        } else {
            r
        }
    }
}

/// Default proxy mass coefficient 2^{3/2}.
pub const PROXY_C: f64 = 2.828_427_124_746_190_3;
