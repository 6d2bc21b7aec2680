//! Exact expectations on small graphs by exhaustive enumeration.
//!
//! Configurations are tallied once into a [`Census`] of weight classes and the
//! census is then evaluated at any (p, z = e^{−h}) in any [`Weight`] type, so
//! `f64` and exact rationals share one enumeration.

pub mod census;
pub mod identities;
pub mod inequalities;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::events::{bit, Bits, BondSiteConfig, Event, FiniteGraph, Occupied};
use crate::scalar::Weight;
pub use census::{Census, DenseTally, Tally, WeightClass, WeightTable};

/// Largest log2 of the number of enumerated configurations.
pub const ENUMERATION_LIMIT_LOG2: u32 = 28;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration of 2^{log2} configurations ({bonds} bonds, {sites} green sites) exceeds 2^{limit}")]
    TooLarge {
        bonds: u32,
        sites: u32,
        log2: u32,
        limit: u32,
    },
    #[error("event is not increasing: {0}")]
    NotIncreasing(String),
    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),
}

/// How green sites are summed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GreenMode {
    /// Sum over "contains a green" patterns of the event's green blocks.
    Analytic,
    /// Enumerate every green bitset.
    Explicit,
}

/// Graph, parameters and green mode of an exact computation.
#[derive(Clone, Debug)]
pub struct EnumerationSpec<W> {
    pub graph: FiniteGraph,
    pub p: W,
    /// z = e^{−h}.
    pub z: W,
    pub green_mode: GreenMode,
}

impl EnumerationSpec<f64> {
    pub fn new(graph: FiniteGraph, p: f64, h: f64, green_mode: GreenMode) -> Self {
        assert!((0.0..=1.0).contains(&p) && h >= 0.0, "p in [0,1], h >= 0");
        Self {
            graph,
            p,
            z: (-h).exp(),
            green_mode,
        }
    }
}

impl<W: Weight> EnumerationSpec<W> {
    /// Parameters given directly as p and z (exact when `W` is rational).
    pub fn with_pz(graph: FiniteGraph, p: W, z: W, green_mode: GreenMode) -> Self {
        Self {
            graph,
            p,
            z,
            green_mode,
        }
    }

    pub fn table(&self) -> WeightTable<W> {
        WeightTable::new(
            self.p.clone(),
            self.z.clone(),
            self.graph.bond_count(),
            self.graph.site_count(),
        )
    }
}

/// An enumerated value and the number of configurations summed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactValue<W> {
    pub value: W,
    pub term_count: u64,
}

pub(crate) fn guard(bonds: u32, sites: u32) -> Result<(), OracleError> {
    let log2 = bonds + sites;
    if log2 > ENUMERATION_LIMIT_LOG2 {
        return Err(OracleError::TooLarge {
            bonds,
            sites,
            log2,
            limit: ENUMERATION_LIMIT_LOG2,
        });
    }
    Ok(())
}

/// Positions of set bits, for mapping a dense index to a submask.
pub(crate) fn positions(mask: u64) -> Vec<usize> {
    Bits(mask).collect()
}

#[inline]
pub(crate) fn deposit(index: u64, pos: &[usize]) -> u64 {
    let mut out = 0;
    for (i, &p) in pos.iter().enumerate() {
        if index & (1 << i) != 0 {
            out |= bit(p);
        }
    }
    out
}

/// Calls `f` on every submask of `free` in increasing order, split into
/// independent chunks whose results are merged in chunk order.
pub(crate) fn for_submasks<T, I, F, M>(free: u64, init: I, f: F, merge: M) -> T
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(&mut T, u64) + Sync,
    M: Fn(T, T) -> T + Sync + Send,
{
    let pos = positions(free);
    let n = pos.len() as u32;
    let total: u64 = 1 << n;
    let chunk_bits = n.saturating_sub(12).min(8);
    let chunks = 1u64 << chunk_bits;
    let per = total / chunks;
    (0..chunks)
        .into_par_iter()
        .fold(&init, |mut acc, c| {
            let mut sub = deposit(c * per, &pos);
            for i in 0..per {
                f(&mut acc, sub);
                if i + 1 < per {
                    sub = (sub.wrapping_sub(free)) & free;
                }
            }
            acc
        })
        .reduce(&init, &merge)
}

/// Census of an event over configurations in which only `free_bonds` may be
/// occupied and only `free_sites` may be green.
pub fn census_of<E: Event + ?Sized>(
    g: &FiniteGraph,
    event: &E,
    free_bonds: u64,
    free_sites: u64,
    mode: GreenMode,
) -> Result<Census, OracleError> {
    let nb = free_bonds.count_ones();
    let ns = free_sites.count_ones();
    guard(nb, if mode == GreenMode::Explicit { ns } else { 0 })?;
    let tally = for_submasks(
        free_bonds,
        || Tally::new(nb),
        |t, bonds| classify_config(g, event, bonds, free_sites, mode, t),
        |mut a, b| {
            a.merge(b);
            a
        },
    );
    Ok(tally.finish())
}

/// Full-graph census.
pub fn census<E: Event + ?Sized>(
    g: &FiniteGraph,
    event: &E,
    mode: GreenMode,
) -> Result<Census, OracleError> {
    census_of(g, event, g.all_bonds(), g.all_sites(), mode)
}

fn classify_config<E: Event + ?Sized>(
    g: &FiniteGraph,
    event: &E,
    bonds: u64,
    free_sites: u64,
    mode: GreenMode,
    t: &mut Tally,
) {
    let a = bonds.count_ones();
    match mode {
        GreenMode::Explicit => {
            let ns = free_sites.count_ones();
            let mut gs = 0u64;
            loop {
                t.add_terms(1);
                if event.holds(g, &BondSiteConfig::with_green(bonds, gs)) {
                    let k = gs.count_ones();
                    t.add(WeightClass::simple(a, ns - k, k), 1);
                }
                if gs == free_sites {
                    break;
                }
                gs = (gs.wrapping_sub(free_sites)) & free_sites;
            }
        }
        GreenMode::Analytic => {
            let blocks: Vec<u64> = event
                .green_blocks(g, bonds)
                .into_iter()
                .map(|b| b & free_sites)
                .filter(|&b| b != 0)
                .collect();
            debug_assert!(
                {
                    let mut seen = 0u64;
                    blocks.iter().all(|&b| {
                        let ok = seen & b == 0;
                        seen |= b;
                        ok
                    })
                },
                "green blocks overlap"
            );
            let k = blocks.len();
            let mut sizes = Vec::with_capacity(k);
            for pattern in 0u64..(1u64 << k) {
                t.add_terms(1);
                let mut green = 0u64;
                let mut clear = 0u32;
                sizes.clear();
                for (i, &b) in blocks.iter().enumerate() {
                    if pattern & (1 << i) != 0 {
                        green |= b;
                        sizes.push(b.count_ones());
                    } else {
                        clear += b.count_ones();
                    }
                }
                if event.holds(g, &BondSiteConfig::with_green(bonds, green)) {
                    t.add(WeightClass::new(a, clear, &sizes), 1);
                }
            }
        }
    }
}

/// Census per tag, where the tag is a site set determined by the bonds.
pub fn tagged_census_of<E, T>(
    g: &FiniteGraph,
    event: &E,
    tag: T,
    free_bonds: u64,
    free_sites: u64,
    mode: GreenMode,
) -> Result<Vec<(u64, Census)>, OracleError>
where
    E: Event + ?Sized,
    T: Fn(u64) -> u64 + Sync,
{
    use std::collections::BTreeMap;
    let nb = free_bonds.count_ones();
    let ns = free_sites.count_ones();
    guard(nb, if mode == GreenMode::Explicit { ns } else { 0 })?;
    let map = for_submasks(
        free_bonds,
        BTreeMap::<u64, Tally>::new,
        |m, bonds| {
            let s = tag(bonds);
            let t = m.entry(s).or_insert_with(|| Tally::new(nb));
            classify_config(g, event, bonds, free_sites, mode, t);
        },
        |mut a, b| {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(t) => t.merge(v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
            a
        },
    );
    Ok(map.into_iter().map(|(k, t)| (k, t.finish())).collect())
}

/// ⟨I[E]⟩.
pub fn expectation<W: Weight, E: Event + ?Sized>(
    spec: &EnumerationSpec<W>,
    event: &E,
) -> Result<ExactValue<W>, OracleError> {
    let c = census(&spec.graph, event, spec.green_mode)?;
    Ok(ExactValue {
        value: c.evaluate(&spec.table()),
        term_count: c.terms(),
    })
}

/// Census of {v ↔ x in S and the cluster of v in S is green-free} for every x,
/// enumerating only bonds inside S. Connection in S follows the site-set
/// definition: it requires v ∈ S.
pub fn two_point_censuses(g: &FiniteGraph, v: usize, s: u64) -> Vec<Census> {
    let n = g.site_count();
    let free = g.bonds_inside(s);
    let nb = free.count_ones();
    if s & bit(v) == 0 {
        return vec![Census::empty(nb); n];
    }
    let tallies = for_submasks(
        free,
        || vec![DenseTally::new(nb, n); n],
        |t, bonds| {
            let c = Occupied::new(g, bonds).reach(bit(v), s);
            let size = c.count_ones();
            let a = bonds.count_ones();
            for x in Bits(c) {
                t[x].add(a, size);
            }
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(&y);
            }
            a
        },
    );
    let terms = 1u64 << nb;
    tallies.iter().map(|t| t.finish(terms)).collect()
}

/// τ(x, y) = ⟨I[x ↔ y and C(x) ∩ G = ∅]⟩.
pub fn two_point<W: Weight>(
    spec: &EnumerationSpec<W>,
    x: usize,
    y: usize,
) -> Result<ExactValue<W>, OracleError> {
    match spec.green_mode {
        GreenMode::Analytic => {
            guard(spec.graph.bond_count() as u32, 0)?;
            let c = &two_point_censuses(&spec.graph, x, spec.graph.all_sites())[y];
            Ok(ExactValue {
                value: c.evaluate(&spec.table()),
                term_count: c.terms(),
            })
        }
        GreenMode::Explicit => {
            expectation(spec, &crate::events::algebra::GreenFreeConnection(x, y))
        }
    }
}

/// τ(x, ·) for every target.
pub fn two_point_all<W: Weight>(
    spec: &EnumerationSpec<W>,
    x: usize,
) -> Result<Vec<W>, OracleError> {
    guard(spec.graph.bond_count() as u32, 0)?;
    let t = spec.table();
    Ok(two_point_censuses(&spec.graph, x, spec.graph.all_sites())
        .iter()
        .map(|c| c.evaluate(&t))
        .collect())
}

/// Census of |C(x)|: classes (occupied, clear = |C(x)|).
pub fn cluster_size_census(g: &FiniteGraph, x: usize) -> Result<Census, OracleError> {
    let nb = g.bond_count() as u32;
    guard(nb, 0)?;
    let t = for_submasks(
        g.all_bonds(),
        || DenseTally::new(nb, g.site_count()),
        |t, bonds| {
            t.add(
                bonds.count_ones(),
                Occupied::new(g, bonds).cluster(x).count_ones(),
            )
        },
        |mut a, b| {
            a.merge(&b);
            a
        },
    );
    Ok(t.finish(1 << nb))
}

/// Magnetization and susceptibility at a site.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MagSus<W> {
    pub magnetization: W,
    pub susceptibility: W,
    pub term_count: u64,
}

/// M = 1 − ⟨e^{−h|C(x)|}⟩ and χ = ⟨|C(x)| e^{−h|C(x)|}⟩, with χ checked against Σ_y τ(x, y).
pub fn magnetization_susceptibility<W: Weight>(
    spec: &EnumerationSpec<W>,
    origin: usize,
) -> Result<MagSus<W>, OracleError> {
    let c = cluster_size_census(&spec.graph, origin)?;
    let t = spec.table();
    let m = W::one() - c.evaluate(&t);
    let chi = c.evaluate_with(&t, |k| W::from_count(k.clear() as u64));
    let chi2 = W::sum(two_point_all(spec, origin)?);
    let diff = (chi.clone() - chi2.clone()).abs_val().to_f64();
    if diff > 1e-12 * chi.to_f64().abs().max(1.0) {
        return Err(OracleError::Inconsistent(format!(
            "chi {:?} vs sum of two-point {:?}",
            chi, chi2
        )));
    }
    Ok(MagSus {
        magnetization: m,
        susceptibility: chi,
        term_count: c.terms(),
    })
}

/// Probability that x is connected to a green site.
pub fn magnetization<W: Weight>(
    g: &FiniteGraph,
    x: usize,
    t: &WeightTable<W>,
) -> Result<W, OracleError> {
    Ok(W::one() - cluster_size_census(g, x)?.evaluate(t))
}
