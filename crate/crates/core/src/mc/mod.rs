//! Monte Carlo for bond percolation on tori with the green field integrated out.
//!
//! A sample is one bond configuration. Each cluster C contributes with the
//! exact conditional weight e^{−h|C|} of containing no green site, so every h of
//! the grid is estimated from the same samples.

mod pc;
mod sampler;

pub use pc::{estimate_pc, wrapping_thresholds, PcConfig, PcEstimate, WrappingCurve};
pub use sampler::{sample_clusters, sample_rng, ClusterDecomposition, Sampler, UnionFind};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{LatticeSpec, WaveVector};

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no percolation transition below p = 1 in dimension {0}")]
    NoTransition(usize),
    #[error("p_c search did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// What to simulate and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub lattice: LatticeSpec,
    pub p: f64,
    pub h_grid: Vec<f64>,
    pub k_list: Vec<WaveVector>,
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
    /// Number of batches for batch-means errors; fixed by the plan, not by the workers.
    pub batches: usize,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<(), McError> {
        let bad = |m: &str| Err(McError::InvalidPlan(m.to_string()));
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad("p must lie in [0, 1]");
        }
        if self.h_grid.iter().any(|&h| !(h >= 0.0 && h.is_finite())) {
            return bad("h values must be finite and non-negative");
        }
        if self.h_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("h values must be distinct and sorted");
        }
        if self
            .k_list
            .iter()
            .any(|k| k.dimension() != self.lattice.dimension)
        {
            return bad("wave vector dimension differs from the lattice");
        }
        if self.batches == 0 {
            return bad("batches must be at least 1");
        }
        if self.lattice.kind == crate::lattice::LatticeKind::NearestNeighbour
            && self.lattice.torus_side < 3
        {
            return bad("nearest-neighbour tori need side at least 3");
        }
        if self.lattice.volume() > u32::MAX as usize / 2 {
            return bad("torus too large");
        }
        Ok(())
    }
}

/// Mean with a batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl Estimate {
    fn from_batches(sums: &[f64], counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        let mean = sums.iter().sum::<f64>() / n as f64;
        let b = sums.len();
        let stderr = if b < 2 {
            f64::NAN
        } else {
            let var = sums
                .iter()
                .zip(counts)
                .map(|(s, &c)| (s / c as f64 - mean).powi(2))
                .sum::<f64>()
                / (b - 1) as f64;
            (var / b as f64).sqrt()
        };
        Self {
            mean,
            stderr,
            n_samples: n,
        }
    }
}

/// Log-binned histogram bin of P(|C(0)| = n), as site counts summed over samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub n_low: u64,
    pub n_high: u64,
    pub count: u64,
}

/// Estimates per h (and per k for τ̂).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableTable {
    pub h_grid: Vec<f64>,
    pub k_list: Vec<WaveVector>,
    pub magnetization: Vec<Estimate>,
    pub susceptibility: Vec<Estimate>,
    /// τ̂_h(k), indexed [h][k].
    pub tau: Vec<Vec<Estimate>>,
    /// Imaginary part of τ̂_h(k); the estimator is a power spectrum, so it is exactly 0.
    pub tau_imag: Vec<Vec<Estimate>>,
    /// Number of clusters per sample.
    pub cluster_count: Estimate,
    pub histogram: Vec<HistogramBin>,
    pub samples: usize,
    pub volume: usize,
    /// Per-batch means, for resampling.
    pub batches: BatchMeans,
}

/// Means of each batch: magnetization and susceptibility [batch][h], τ̂
/// [batch][h·|k| + k], histogram bin probabilities [batch][bin].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans {
    pub counts: Vec<usize>,
    pub magnetization: Vec<Vec<f64>>,
    pub susceptibility: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    pub histogram: Vec<Vec<f64>>,
}

impl ObservableTable {
    /// P(|C(0)| ∈ bin) for each histogram bin.
    pub fn bin_probabilities(&self) -> Vec<f64> {
        let total = (self.samples * self.volume) as f64;
        self.histogram
            .iter()
            .map(|b| b.count as f64 / total)
            .collect()
    }
}

/// Per-sample observables, already divided by the volume.
#[derive(Clone, Debug, Default)]
pub(crate) struct SampleStats {
    pub one_minus_m: Vec<f64>,
    pub chi: Vec<f64>,
    pub tau: Vec<f64>,
    pub clusters: f64,
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug)]
struct BatchSums {
    count: usize,
    m: Vec<f64>,
    chi: Vec<f64>,
    tau: Vec<f64>,
    clusters: f64,
    histogram: Vec<u64>,
}

pub(crate) fn histogram_bin(n: usize) -> usize {
    (usize::BITS - 1 - n.leading_zeros()) as usize
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool, McError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| McError::Pool(e.to_string()))
}

/// Runs the plan. Results depend only on the plan minus `workers`.
pub fn measure(plan: &SimulationPlan) -> Result<ObservableTable, McError> {
    plan.validate()?;
    let nh = plan.h_grid.len();
    let nk = plan.k_list.len();
    let nbins = histogram_bin(plan.lattice.volume()) + 1;
    let batches = plan.batches.min(plan.samples);
    let bounds: Vec<(usize, usize)> = (0..batches)
        .map(|b| (b * plan.samples / batches, (b + 1) * plan.samples / batches))
        .collect();
    let sums: Vec<BatchSums> = pool(plan.workers)?.install(|| {
        bounds
            .par_iter()
            .map_init(
                || Sampler::new(&plan.lattice, &plan.k_list),
                |sampler, &(lo, hi)| {
                    let mut acc = BatchSums {
                        count: hi - lo,
                        m: vec![0.0; nh],
                        chi: vec![0.0; nh],
                        tau: vec![0.0; nh * nk],
                        clusters: 0.0,
                        histogram: vec![0; nbins],
                    };
                    for i in lo..hi {
                        let mut rng = sample_rng(plan.seed, i as u64);
                        sampler.sample(plan.p, &mut rng);
                        let s = sampler.stats(&plan.h_grid);
                        for j in 0..nh {
                            acc.m[j] += 1.0 - s.one_minus_m[j];
                            acc.chi[j] += s.chi[j];
                        }
                        for (a, b) in acc.tau.iter_mut().zip(&s.tau) {
                            *a += b;
                        }
                        acc.clusters += s.clusters;
                        for (a, b) in acc.histogram.iter_mut().zip(&s.histogram) {
                            *a += b;
                        }
                    }
                    acc
                },
            )
            .collect()
    });
    let counts: Vec<usize> = sums.iter().map(|b| b.count).collect();
    let column = |f: &dyn Fn(&BatchSums) -> f64| {
        Estimate::from_batches(&sums.iter().map(f).collect::<Vec<_>>(), &counts)
    };
    let magnetization = (0..nh).map(|j| column(&|b| b.m[j])).collect();
    let susceptibility = (0..nh).map(|j| column(&|b| b.chi[j])).collect();
    let tau = (0..nh)
        .map(|j| (0..nk).map(|k| column(&|b| b.tau[j * nk + k])).collect())
        .collect();
    let zero = Estimate {
        mean: 0.0,
        stderr: 0.0,
        n_samples: plan.samples,
    };
    let tau_imag = vec![vec![zero; nk]; nh];
    let cluster_count = column(&|b| b.clusters);
    let mut hist = vec![0u64; nbins];
    for b in &sums {
        for (a, c) in hist.iter_mut().zip(&b.histogram) {
            *a += c;
        }
    }
    let vol = plan.lattice.volume() as f64;
    let per = |b: &BatchSums, v: &[f64]| v.iter().map(|x| x / b.count as f64).collect::<Vec<f64>>();
    let batches = BatchMeans {
        counts: counts.clone(),
        magnetization: sums.iter().map(|b| per(b, &b.m)).collect(),
        susceptibility: sums.iter().map(|b| per(b, &b.chi)).collect(),
        tau: sums.iter().map(|b| per(b, &b.tau)).collect(),
        histogram: sums.iter().map(|b| b.histogram.iter().map(|&c| c as f64 / (b.count as f64 * vol)).collect()).collect(),
    };
    let histogram = hist
        .iter()
        .enumerate()
        .map(|(j, &count)| HistogramBin {
            n_low: 1 << j,
            n_high: ((1u64 << (j + 1)) - 1).min(plan.lattice.volume() as u64),
            count,
        })
        .collect();
    Ok(ObservableTable {
        h_grid: plan.h_grid.clone(),
        k_list: plan.k_list.clone(),
        magnetization,
        susceptibility,
        tau,
        tau_imag,
        cluster_count,
        histogram,
        samples: plan.samples,
        volume: plan.lattice.volume(),
        batches,
    })
}

/// Wave vectors 2πm/s along the first axis for m = 0..count.
pub fn axis_wave_vectors(spec: &LatticeSpec, count: usize) -> Vec<WaveVector> {
    (0..count)
        .map(|m| {
            let mut modes = vec![0i64; spec.dimension];
            modes[0] = m as i64;
            WaveVector::from_modes(&modes, spec.torus_side)
        })
        .collect()
}

/// Largest torus accepted by [`two_point_function`].
pub const TWO_POINT_MAX_VOLUME: usize = 4096;

/// Position-space estimate of τ_h(0, x) = V⁻¹ Σ_y P(y ↔ y + x, no green in the
/// cluster), indexed by the site of x.
pub fn two_point_function(lattice: &LatticeSpec, p: f64, h: f64, samples: usize, seed: u64, workers: usize) -> Result<Vec<f64>, McError> {
    let v = lattice.volume();
    if v > TWO_POINT_MAX_VOLUME {
        return Err(McError::InvalidPlan(format!("two-point grids need volume ≤ {TWO_POINT_MAX_VOLUME}")));
    }
    if !(0.0..=1.0).contains(&p) || !(h >= 0.0) || samples == 0 {
        return Err(McError::InvalidPlan("need p in [0, 1], h ≥ 0 and samples ≥ 1".into()));
    }
    let idx = crate::lattice::TorusIndexer::new(lattice);
    let s = lattice.torus_side;
    let coords: Vec<Vec<usize>> = (0..v).map(|x| idx.coords(x)).collect();
    let chunk = 64;
    let chunks: Vec<(usize, usize)> = (0..samples.div_ceil(chunk)).map(|c| (c * chunk, ((c + 1) * chunk).min(samples))).collect();
    let parts: Vec<Vec<f64>> = pool(workers)?.install(|| {
        chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut acc = vec![0.0; v];
                let mut sampler = Sampler::new(lattice, &[]);
                let mut diff = vec![0usize; lattice.dimension];
                for i in lo..hi {
                    sampler.sample(p, &mut sample_rng(seed, i as u64));
                    let dec = sampler.decomposition();
                    let mut members: Vec<Vec<usize>> = vec![Vec::new(); dec.sizes.len()];
                    for (x, &c) in dec.labels.iter().enumerate() {
                        members[c as usize].push(x);
                    }
                    for m in &members {
                        let w = (-h * m.len() as f64).exp();
                        for &x in m {
                            for &y in m {
                                for (j, d) in diff.iter_mut().enumerate() {
                                    *d = (coords[y][j] + s - coords[x][j]) % s;
                                }
                                acc[idx.index(&diff)] += w;
                            }
                        }
                    }
                }
                acc
            })
            .collect()
    });
    let mut out = vec![0.0; v];
    for part in &parts {
        for (o, a) in out.iter_mut().zip(part) {
            *o += a;
        }
    }
    let norm = (v * samples) as f64;
    Ok(out.into_iter().map(|x| x / norm).collect())
}
