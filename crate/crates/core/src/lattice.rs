//! Hypercubic lattices, their step distributions and torus geometry.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::FiniteGraph;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("torus side {side} too small for range {range} (need at least {need})")]
    SideTooSmall {
        side: usize,
        range: usize,
        need: usize,
    },
    #[error("spread-out range must be positive")]
    ZeroRange,
    #[error("wave vector has {got} components, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("wave vector component {0} outside [-pi, pi]")]
    OutOfRange(f64),
    #[error("torus with {0} sites exceeds the finite-graph limit")]
    TooLarge(usize),
}

/// Step distribution of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatticeKind {
    NearestNeighbour,
    SpreadOut(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dimension: usize,
    pub kind: LatticeKind,
    pub torus_side: usize,
}

impl LatticeSpec {
    pub fn new(
        dimension: usize,
        kind: LatticeKind,
        torus_side: usize,
    ) -> Result<Self, LatticeError> {
        if dimension == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if let LatticeKind::SpreadOut(l) = kind {
            if l == 0 {
                return Err(LatticeError::ZeroRange);
            }
            if torus_side < 2 * l + 1 {
                return Err(LatticeError::SideTooSmall {
                    side: torus_side,
                    range: l,
                    need: 2 * l + 1,
                });
            }
        }
        if torus_side < 2 {
            return Err(LatticeError::SideTooSmall {
                side: torus_side,
                range: 1,
                need: 2,
            });
        }
        Ok(Self {
            dimension,
            kind,
            torus_side,
        })
    }

    pub fn nearest_neighbour(dimension: usize, torus_side: usize) -> Result<Self, LatticeError> {
        Self::new(dimension, LatticeKind::NearestNeighbour, torus_side)
    }

    pub fn spread_out(
        dimension: usize,
        range: usize,
        torus_side: usize,
    ) -> Result<Self, LatticeError> {
        Self::new(dimension, LatticeKind::SpreadOut(range), torus_side)
    }

    pub fn range(&self) -> usize {
        match self.kind {
            LatticeKind::NearestNeighbour => 1,
            LatticeKind::SpreadOut(l) => l,
        }
    }

    /// |Ω|.
    pub fn omega_size(&self) -> usize {
        match self.kind {
            LatticeKind::NearestNeighbour => 2 * self.dimension,
            LatticeKind::SpreadOut(l) => (2 * l + 1).pow(self.dimension as u32) - 1,
        }
    }

    /// Number of torus sites s^d.
    pub fn volume(&self) -> usize {
        self.torus_side.pow(self.dimension as u32)
    }

    /// Second moment σ² = |Ω|⁻¹ Σ_{x∈Ω} |x|².
    pub fn second_moment(&self) -> f64 {
        let omega = neighbourhood(self);
        let total: i64 = omega
            .iter()
            .map(|x| x.iter().map(|&c| (c as i64) * (c as i64)).sum::<i64>())
            .sum();
        total as f64 / omega.len() as f64
    }

    /// The quadratic variable 2d(1 − D̂(k))/σ², asymptotic to |k|² at small k.
    pub fn effective_k2<T: Real>(&self, k: &WaveVector<T>) -> T {
        let d = T::of(self.dimension as f64);
        T::of(2.0) * d * (T::one() - dhat(self, k)) / T::of(self.second_moment())
    }
}

/// Ω sorted lexicographically.
pub fn neighbourhood(spec: &LatticeSpec) -> Vec<Vec<i32>> {
    let d = spec.dimension;
    let mut out = Vec::with_capacity(spec.omega_size());
    match spec.kind {
        LatticeKind::NearestNeighbour => {
            for j in 0..d {
                for sign in [-1, 1] {
                    let mut v = vec![0; d];
                    v[j] = sign;
                    out.push(v);
                }
            }
        }
        LatticeKind::SpreadOut(l) => {
            let l = l as i32;
            let width = (2 * l + 1) as usize;
            for idx in 0..width.pow(d as u32) {
                let mut rem = idx;
                let mut v = vec![0; d];
                for c in v.iter_mut() {
                    *c = (rem % width) as i32 - l;
                    rem /= width;
                }
                if v.iter().any(|&c| c != 0) {
                    out.push(v);
                }
            }
        }
    }
    out.sort();
    out
}

/// Canonical offsets: of each pair {e, −e} the lexicographically smaller one.
pub fn canonical_offsets(spec: &LatticeSpec) -> Vec<Vec<i32>> {
    neighbourhood(spec)
        .into_iter()
        .filter(|v| {
            let neg: Vec<i32> = v.iter().map(|c| -c).collect();
            *v < neg
        })
        .collect()
}

/// A point of [−π, π]^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveVector<T = f64> {
    components: Vec<T>,
}

impl<T: Real> WaveVector<T> {
    pub fn new(components: Vec<T>) -> Result<Self, LatticeError> {
        let pi = T::of(PI);
        for &c in &components {
            if !(c >= -pi && c <= pi) {
                return Err(LatticeError::OutOfRange(c.to_f64().unwrap_or(f64::NAN)));
            }
        }
        Ok(Self { components })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            components: vec![T::zero(); d],
        }
    }

    /// Torus momentum with integer labels m_j, each mapped to (−π, π].
    pub fn from_modes(modes: &[i64], side: usize) -> Self {
        let s = side as i64;
        let components = modes
            .iter()
            .map(|&m| {
                let mut r = m.rem_euclid(s);
                if 2 * r > s {
                    r -= s;
                }
                T::of(2.0 * PI * r as f64 / s as f64)
            })
            .collect();
        Self { components }
    }

    pub fn components(&self) -> &[T] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn norm2(&self) -> T {
        self.components.iter().fold(T::zero(), |a, &c| a + c * c)
    }
}

/// D̂(k) = |Ω|⁻¹ Σ_{x∈Ω} e^{ik·x}.
pub fn dhat<T: Real>(spec: &LatticeSpec, k: &WaveVector<T>) -> T {
    assert_eq!(k.dimension(), spec.dimension, "wave vector dimension");
    let kc = k.components();
    match spec.kind {
        LatticeKind::NearestNeighbour => {
            let s = kc.iter().fold(T::zero(), |a, &c| a + c.cos());
            s / T::of(spec.dimension as f64)
        }
        LatticeKind::SpreadOut(l) => {
            // Product over axes of Σ_{|x_j|≤L} e^{ik_j x_j}, minus the origin term.
            let mut prod = T::one();
            for &c in kc {
                let mut axis = T::one();
                for x in 1..=l {
                    axis = axis + T::of(2.0) * (c * T::of(x as f64)).cos();
                }
                prod = prod * axis;
            }
            #[cfg(debug_assertions)]
            {
                let omega = neighbourhood(spec);
                let im: f64 = omega
                    .iter()
                    .map(|x| {
                        let phase: f64 = x
                            .iter()
                            .zip(kc)
                            .map(|(&xi, &ki)| xi as f64 * ki.to_f64().unwrap())
                            .sum();
                        phase.sin()
                    })
                    .sum();
                debug_assert!(
                    im.abs() < 1e-12 * omega.len() as f64,
                    "imaginary part of dhat"
                );
            }
            (prod - T::one()) / T::of(spec.omega_size() as f64)
        }
    }
}

/// All s^d torus momenta, in the site flat-index order of [`TorusIndexer`].
pub fn fourier_grid<T: Real>(spec: &LatticeSpec) -> Vec<WaveVector<T>> {
    let idx = TorusIndexer::new(spec);
    (0..idx.site_count())
        .map(|i| {
            let modes: Vec<i64> = idx.coords(i).iter().map(|&c| c as i64).collect();
            WaveVector::from_modes(&modes, spec.torus_side)
        })
        .collect()
}

/// Flat indexing of torus sites and bonds.
#[derive(Clone, Debug)]
pub struct TorusIndexer {
    dimension: usize,
    side: usize,
    sites: usize,
    offsets: Vec<Vec<i32>>,
}

impl TorusIndexer {
    pub fn new(spec: &LatticeSpec) -> Self {
        Self {
            dimension: spec.dimension,
            side: spec.torus_side,
            sites: spec.volume(),
            offsets: canonical_offsets(spec),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn site_count(&self) -> usize {
        self.sites
    }

    pub fn bond_count(&self) -> usize {
        self.sites * self.offsets.len()
    }

    pub fn canonical_offsets(&self) -> &[Vec<i32>] {
        &self.offsets
    }

    /// Flat index with the first coordinate varying fastest.
    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &c| acc * self.side + c)
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dimension];
        for c in out.iter_mut() {
            *c = index % self.side;
            index /= self.side;
        }
        out
    }

    /// Site reached from `site` by an integer displacement.
    pub fn shift(&self, site: usize, offset: &[i32]) -> usize {
        let s = self.side as i64;
        let mut rem = site;
        let mut stride = 1;
        let mut out = 0;
        for &o in offset {
            let c = (rem % self.side) as i64;
            rem /= self.side;
            out += ((c + o as i64).rem_euclid(s) as usize) * stride;
            stride *= self.side;
        }
        out
    }

    /// Bond index ↔ (site, canonical offset index).
    pub fn bond_index(&self, site: usize, offset: usize) -> usize {
        site * self.offsets.len() + offset
    }

    pub fn bond(&self, index: usize) -> (usize, usize) {
        (index / self.offsets.len(), index % self.offsets.len())
    }

    pub fn bond_endpoints(&self, index: usize) -> (usize, usize) {
        let (x, o) = self.bond(index);
        (x, self.shift(x, &self.offsets[o]))
    }

    /// Minimal-image displacement from `a` to `b`, each component in (−s/2, s/2].
    pub fn displacement(&self, a: usize, b: usize) -> Vec<i64> {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let s = self.side as i64;
        ca.iter()
            .zip(&cb)
            .map(|(&x, &y)| {
                let mut r = (y as i64 - x as i64).rem_euclid(s);
                if 2 * r > s {
                    r -= s;
                }
                r
            })
            .collect()
    }

    pub fn min_image_norm2(&self, a: usize, b: usize) -> i64 {
        self.displacement(a, b).iter().map(|c| c * c).sum()
    }

    /// The torus as a simple graph; parallel bonds arising on small tori are merged.
    pub fn finite_graph(&self) -> Result<FiniteGraph, LatticeError> {
        let mut pairs = Vec::new();
        for b in 0..self.bond_count() {
            let (x, y) = self.bond_endpoints(b);
            if x == y {
                continue;
            }
            let key = (x.min(y), x.max(y));
            if !pairs.contains(&key) {
                pairs.push(key);
            }
        }
        FiniteGraph::new(self.sites, pairs).map_err(|_| LatticeError::TooLarge(self.sites))
    }
}
