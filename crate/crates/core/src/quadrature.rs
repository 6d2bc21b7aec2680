//! Globally adaptive Gauss–Kronrod (7, 15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("no convergence after {subdivisions} subdivisions (error estimate {error:e})")]
    NoConvergence { subdivisions: usize, error: f64 },
    #[error("integrand not finite at {0}")]
    NotFinite(f64),
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Integral with its error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Piece, QuadratureError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = 0.0;
    let mut g = 0.0;
    for i in 0..8 {
        let (x1, x2) = (c - h * XGK[i], c + h * XGK[i]);
        let y = if i == 7 { f(c) } else { f(x1) + f(x2) };
        if !y.is_finite() {
            return Err(QuadratureError::NotFinite(if i == 7 { c } else { x1 }));
        }
        k += WGK[i] * y;
        if i % 2 == 1 {
            g += WG[i / 2] * y;
        }
    }
    Ok(Piece { a, b, value: k * h, error: ((k - g) * h).abs() })
}

/// ∫_a^b f, bisecting the worst interval until the summed error estimate is
/// below max(abs_tol, rel_tol·|value|).
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<Quadrature, QuadratureError> {
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let mut heap = BinaryHeap::new();
    let first = gk15(&f, a, b)?;
    let (mut value, mut error) = (first.value, first.error);
    heap.push(first);
    let mut evaluations = 15;
    let mut splits = 0;
    while error > abs_tol.max(rel_tol * value.abs()) {
        if splits >= max_subdivisions {
            return Err(QuadratureError::NoConvergence { subdivisions: splits, error });
        }
        let worst = heap.pop().expect("non-empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            return Err(QuadratureError::NoConvergence { subdivisions: splits, error });
        }
        let (l, r) = (gk15(&f, worst.a, m)?, gk15(&f, m, worst.b)?);
        evaluations += 30;
        splits += 1;
        value += l.value + r.value - worst.value;
        error += l.error + r.error - worst.error;
        heap.push(l);
        heap.push(r);
        if splits % 64 == 0 {
            // Refresh running sums against drift.
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
        }
    }
    value = heap.iter().map(|p| p.value).sum();
    error = heap.iter().map(|p| p.error).sum();
    Ok(Quadrature { value, error, evaluations })
}

/// ∫_a^∞ f via x = a + t/(1 − t).
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<Quadrature, QuadratureError> {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        let y = f(a + t / s) / (s * s);
        if y.is_finite() {
            y
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, abs_tol, rel_tol, max_subdivisions)
}

/// Sum of integrals over consecutive breakpoints.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<Quadrature, QuadratureError> {
    let mut out = Quadrature { value: 0.0, error: 0.0, evaluations: 0 };
    for w in breaks.windows(2) {
        let q = integrate(&f, w[0], w[1], abs_tol, rel_tol, max_subdivisions)?;
        out.value += q.value;
        out.error += q.error;
        out.evaluations += q.evaluations;
    }
    Ok(out)
}
