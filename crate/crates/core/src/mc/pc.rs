//! Critical-point estimation from torus wrapping probabilities.
//!
//! Each sample adds bonds in uniformly random order and records how many were
//! present when some cluster first wrapped around the first axis. Averaging
//! binomial tails over these thresholds gives the wrapping probability at any p.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{pool, sample_rng, McError};
use crate::lattice::{LatticeSpec, TorusIndexer};

/// Settings for [`estimate_pc`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcConfig {
    /// Torus sides, largest last.
    pub sizes: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    /// Width of the final bracket in p.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcEstimate {
    pub p_c: f64,
    /// Where the wrapping probability at the largest size is 1/2.
    pub threshold_p: f64,
    /// Where the two largest sizes give equal wrapping probabilities, if found.
    pub crossing: Option<f64>,
    pub warnings: Vec<String>,
    pub iterations: usize,
}

/// Sorted first-wrap bond counts for one torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrappingCurve {
    pub side: usize,
    pub bonds: u64,
    pub thresholds: Vec<u64>,
}

impl WrappingCurve {
    /// P(some cluster wraps the first axis) at bond density p.
    pub fn probability(&self, p: f64) -> f64 {
        if self.thresholds.is_empty() {
            return 0.0;
        }
        if p <= 0.0 {
            return self.thresholds.iter().filter(|&&n| n == 0).count() as f64
                / self.thresholds.len() as f64;
        }
        if p >= 1.0 {
            return self.thresholds.iter().filter(|&&n| n <= self.bonds).count() as f64
                / self.thresholds.len() as f64;
        }
        let bin = Binomial::new(p, self.bonds).expect("valid binomial");
        let mut total = 0.0;
        let mut last = (u64::MAX, 0.0);
        for &n in &self.thresholds {
            if n != last.0 {
                // P(X ≥ n)
                let tail = if n == 0 {
                    1.0
                } else if n > self.bonds {
                    0.0
                } else {
                    bin.sf(n - 1)
                };
                last = (n, tail);
            }
            total += last.1;
        }
        total / self.thresholds.len() as f64
    }
}

/// Union-find carrying each site's lattice displacement from its parent.
struct WrapFinder {
    parent: Vec<u32>,
    size: Vec<u32>,
    disp: Vec<i32>,
    d: usize,
}

impl WrapFinder {
    fn new(v: usize, d: usize) -> Self {
        Self {
            parent: (0..v as u32).collect(),
            size: vec![1; v],
            disp: vec![0; v * d],
            d,
        }
    }

    fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i as u32;
        }
        self.size.fill(1);
        self.disp.fill(0);
    }

    /// Root of x, with `out` set to the displacement from the root to x.
    fn find(&mut self, x: u32, out: &mut [i32]) -> u32 {
        let d = self.d;
        let mut path = Vec::new();
        let mut r = x;
        while self.parent[r as usize] != r {
            path.push(r);
            r = self.parent[r as usize];
        }
        // Compress from the top down so each node's displacement is to the root.
        for &y in path.iter().rev() {
            let p = self.parent[y as usize];
            if p != r {
                for c in 0..d {
                    self.disp[y as usize * d + c] += self.disp[p as usize * d + c];
                }
            }
            self.parent[y as usize] = r;
        }
        out.copy_from_slice(&self.disp[x as usize * d..(x as usize + 1) * d]);
        r
    }

    /// Adds a bond from a to b = a + offset; true if it closes a loop winding
    /// around the first axis.
    fn add(&mut self, a: u32, b: u32, offset: &[i32], da: &mut [i32], db: &mut [i32]) -> bool {
        let ra = self.find(a, da);
        let rb = self.find(b, db);
        let d = self.d;
        if ra == rb {
            return da[0] + offset[0] - db[0] != 0;
        }
        // position(rb) − position(ra) = da + offset − db
        let (child, root, sign) = if self.size[ra as usize] >= self.size[rb as usize] {
            (rb, ra, 1)
        } else {
            (ra, rb, -1)
        };
        for c in 0..d {
            self.disp[child as usize * d + c] = sign * (da[c] + offset[c] - db[c]);
        }
        self.parent[child as usize] = root;
        self.size[root as usize] += self.size[child as usize];
        false
    }
}

/// First-wrap thresholds for `samples` independent bond orders on one torus.
pub fn wrapping_thresholds(
    spec: &LatticeSpec,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<WrappingCurve, McError> {
    let idx = TorusIndexer::new(spec);
    let v = idx.site_count();
    let d = spec.dimension;
    let offsets = idx.canonical_offsets().to_vec();
    let no = offsets.len();
    let nb = idx.bond_count();
    let stream = (spec.torus_side as u64) << 40;
    let mut thresholds: Vec<u64> = pool(workers)?.install(|| {
        (0..samples)
            .into_par_iter()
            .map_init(
                || {
                    (
                        WrapFinder::new(v, d),
                        (0..nb as u32).collect::<Vec<u32>>(),
                        vec![0i32; d],
                        vec![0i32; d],
                    )
                },
                |(uf, perm, da, db), i| {
                    let mut rng = sample_rng(seed, stream | i as u64);
                    uf.reset();
                    let mut swaps = Vec::new();
                    let mut n = nb as u64 + 1;
                    for t in 0..nb {
                        let j = rng.gen_range(t..nb);
                        perm.swap(t, j);
                        swaps.push(j as u32);
                        let b = perm[t] as usize;
                        let (x, o) = (b / no, b % no);
                        let y = idx.shift(x, &offsets[o]);
                        if uf.add(x as u32, y as u32, &offsets[o], da, db) {
                            n = t as u64 + 1;
                            break;
                        }
                    }
                    for (t, &j) in swaps.iter().enumerate().rev() {
                        perm.swap(t, j as usize);
                    }
                    n
                },
            )
            .collect()
    });
    thresholds.sort_unstable();
    Ok(WrappingCurve {
        side: spec.torus_side,
        bonds: nb as u64,
        thresholds,
    })
}

fn bisect<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize), McError> {
    let flo = f(lo);
    if flo * f(hi) > 0.0 {
        return Err(McError::NoConvergence(0));
    }
    let rising = flo < 0.0;
    for it in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol {
            return Ok((0.5 * (lo + hi), it));
        }
    }
    Err(McError::NoConvergence(max_iter))
}

/// Estimates p_c: bisection for wrapping probability 1/2 on the largest torus,
/// refined by the crossing of the two largest sizes near it.
pub fn estimate_pc(dimension: usize, cfg: &PcConfig) -> Result<PcEstimate, McError> {
    if dimension < 2 {
        return Err(McError::NoTransition(dimension));
    }
    if cfg.sizes.is_empty() || cfg.samples == 0 {
        return Err(McError::InvalidPlan(
            "need at least one size and one sample".into(),
        ));
    }
    if cfg.sizes.iter().any(|&s| s < 3) || cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(McError::InvalidPlan(
            "sizes must be increasing and at least 3".into(),
        ));
    }
    let curves = cfg
        .sizes
        .iter()
        .map(|&s| {
            let spec = LatticeSpec::nearest_neighbour(dimension, s)
                .map_err(|e| McError::InvalidPlan(e.to_string()))?;
            wrapping_thresholds(&spec, cfg.samples, cfg.seed, cfg.workers)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let large = curves.last().unwrap();
    let (threshold_p, mut iterations) = bisect(
        |p| large.probability(p) - 0.5,
        0.0,
        1.0,
        cfg.tolerance,
        cfg.max_iterations,
    )?;
    let mut warnings = Vec::new();
    let mut crossing = None;
    if curves.len() >= 2 {
        let small = &curves[curves.len() - 2];
        let diff = |p: f64| small.probability(p) - large.probability(p);
        let (lo, hi) = (0.5 * threshold_p, (1.5 * threshold_p).min(1.0));
        match bisect(diff, lo, threshold_p, cfg.tolerance, cfg.max_iterations)
            .or_else(|_| bisect(diff, threshold_p, hi, cfg.tolerance, cfg.max_iterations))
        {
            Ok((p, it)) => {
                crossing = Some(p);
                iterations += it;
            }
            Err(_) => warnings.push(format!(
                "no size crossing in [{lo:.6}, {hi:.6}]; using the threshold estimate"
            )),
        }
    }
    let p_c = crossing.unwrap_or(threshold_p);
    let omega = 2.0 * dimension as f64;
    if dimension >= 7 && !(1.0 / omega <= p_c && p_c <= (1.0 + 2.0 / omega) / omega) {
        warnings.push(format!("p_c Ω = {:.4} outside [1, 1 + 2/Ω]", p_c * omega));
    }
    Ok(PcEstimate {
        p_c,
        threshold_p,
        crossing,
        warnings,
        iterations,
    })
}
