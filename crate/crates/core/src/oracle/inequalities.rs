//! Exact checks of the cut-the-tail bound and the G-free BK inequality,
//! with generators of random increasing events.

use rand::Rng;
use serde::Serialize;

use super::identities::{tables, GridPoint, GridWeight};
use super::{
    census, guard, magnetization, tagged_census_of, two_point_censuses, GreenMode, OracleError,
};
use crate::events::algebra::{Blocked, Restricted, SiteSetFn, TildeCluster};
use crate::events::{bit, Bits, BondSiteConfig, Event, FiniteGraph, Occupied, Restriction};

/// Absolute slack below which an inequality counts as violated.
pub const INEQUALITY_TOLERANCE: f64 = 1e-12;

/// Outcome of one inequality check over a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityReport {
    pub inequality: String,
    /// Smallest RHS − LHS seen.
    pub min_slack: f64,
    pub violations: usize,
    pub checks: usize,
    pub terms: u64,
    pub pass: bool,
}

impl InequalityReport {
    fn new(name: &str) -> Self {
        Self {
            inequality: name.to_string(),
            min_slack: f64::INFINITY,
            violations: 0,
            checks: 0,
            terms: 0,
            pass: true,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64) {
        let slack = rhs - lhs;
        self.min_slack = self.min_slack.min(slack);
        self.checks += 1;
        if slack < -INEQUALITY_TOLERANCE {
            self.violations += 1;
            self.pass = false;
        }
    }

    pub fn absorb(&mut self, other: &InequalityReport) {
        self.min_slack = self.min_slack.min(other.min_slack);
        self.violations += other.violations;
        self.checks += other.checks;
        self.terms += other.terms;
        self.pass = self.violations == 0;
    }
}

/// An increasing event: a union of clauses, each requiring a set of bonds to
/// be occupied and optionally a site to be connected to a green site.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneEvent {
    pub clauses: Vec<(u64, Option<usize>)>,
}

impl Event for MonotoneEvent {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        let green = cfg.green_or_empty();
        let occ = Occupied::new(g, cfg.occupied);
        self.clauses
            .iter()
            .any(|&(m, s)| cfg.occupied & m == m && s.map_or(true, |x| occ.cluster(x) & green != 0))
    }
}

impl MonotoneEvent {
    /// One to three clauses over random bond subsets.
    pub fn random<R: Rng>(g: &FiniteGraph, rng: &mut R) -> Self {
        let k = rng.gen_range(1..=3);
        let clauses = (0..k)
            .map(|_| {
                let mut m = 0u64;
                for b in 0..g.bond_count() {
                    if rng.gen_bool(0.35) {
                        m |= bit(b);
                    }
                }
                let s = if rng.gen_bool(0.4) {
                    Some(rng.gen_range(0..g.site_count()))
                } else {
                    None
                };
                (m, s)
            })
            .collect();
        Self { clauses }
    }
}

/// Checks that no configuration leaves E when one bond is added, exhaustively
/// over bonds and green sets.
pub fn check_increasing<E: Event>(g: &FiniteGraph, e: &E) -> Result<(), OracleError> {
    let nb = g.bond_count() as u32;
    let ns = g.site_count() as u32;
    guard(nb, ns)?;
    for occ in 0..(1u64 << nb) {
        for green in 0..(1u64 << ns) {
            if !e.holds(g, &BondSiteConfig::with_green(occ, green)) {
                continue;
            }
            for b in Bits(g.all_bonds() & !occ) {
                if !e.holds(g, &BondSiteConfig::with_green(occ | bit(b), green)) {
                    return Err(OracleError::NotIncreasing(format!(
                        "adding bond {b} to {occ:#x} (green {green:#x})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// ⟨I[E on C̃^{u,v}(A)] τ^{C̃^{u,v}(A)}(v, x)⟩ ≤ (1 − p M)^{-1} P(E) τ(v, x),
/// with M the probability that u is connected to a green site.
pub fn verify_cut_the_tail<W: GridWeight, E: Event>(
    g: &FiniteGraph,
    u: usize,
    v: usize,
    a: u64,
    e: &E,
    x: usize,
    grid: &[GridPoint],
) -> Result<InequalityReport, OracleError> {
    assert!(a & bit(u) != 0, "A must contain u");
    let bond = g
        .bond_between(u, v)
        .expect("u and v must be joined by a bond");
    check_increasing(g, e)?;
    let all = g.all_sites();
    let tilde = TildeCluster { bond, a };
    let on = Restricted {
        event: e,
        set: TildeCluster { bond, a },
        how: Restriction::On,
        exclude: Some(bond),
    };
    let outer = tagged_census_of(
        g,
        &on,
        |occ| tilde.set(g, occ),
        g.all_bonds(),
        all,
        GreenMode::Explicit,
    )?;
    let inner: Vec<_> = outer
        .iter()
        .map(|(s, _)| two_point_censuses(g, v, all & !s).swap_remove(x))
        .collect();
    let pe = census(g, e, GreenMode::Explicit)?;
    let tau = two_point_censuses(g, v, all).swap_remove(x);
    let mut rep = InequalityReport::new("cutthetail");
    rep.terms = pe.terms()
        + tau.terms()
        + outer
            .iter()
            .zip(&inner)
            .map(|((_, c), i)| c.terms() + i.terms())
            .sum::<u64>();
    for t in tables::<W>(g, grid) {
        let lhs = W::sum(
            outer
                .iter()
                .zip(&inner)
                .map(|((_, c), i)| c.evaluate(&t) * i.evaluate(&t)),
        );
        let m = magnetization(g, u, &t)?;
        let denom = W::one() - t.p().clone() * m;
        let rhs = pe.evaluate(&t).to_f64() * tau.evaluate(&t).to_f64() / denom.to_f64();
        rep.record(lhs.to_f64(), rhs);
    }
    Ok(rep)
}

/// An event specifying that each listed pair of sites is connected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConnectionSpec {
    pub pairs: Vec<(usize, usize)>,
}

impl ConnectionSpec {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    /// Whether the bonds in `bonds` alone realise every connection.
    pub fn witnessed(&self, g: &FiniteGraph, bonds: u64) -> bool {
        let o = Occupied::new(g, bonds);
        self.pairs.iter().all(|&(a, b)| o.cluster(a) & bit(b) != 0)
    }

    pub fn sites(&self) -> u64 {
        self.pairs.iter().fold(0, |m, &(a, b)| m | bit(a) | bit(b))
    }

    /// Zero to two random pairs.
    pub fn random<R: Rng>(g: &FiniteGraph, rng: &mut R) -> Self {
        let n = g.site_count();
        let k = rng.gen_range(0..=2);
        Self {
            pairs: (0..k)
                .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
                .collect(),
        }
    }
}

/// Whether E₁ and E₂ occur on disjoint sets of occupied bonds.
pub fn disjoint_occurrence(
    g: &FiniteGraph,
    e1: &ConnectionSpec,
    e2: &ConnectionSpec,
    occupied: u64,
) -> bool {
    let occupied = occupied & g.all_bonds();
    let mut k = occupied;
    loop {
        if e1.witnessed(g, k) && e2.witnessed(g, occupied & !k) {
            return true;
        }
        if k == 0 {
            return false;
        }
        k = (k - 1) & occupied;
    }
}

/// P((E₁ ∘ E₂) occurs and is G-free) ≤ P(E₁ occurs and is G-free) P(E₂),
/// by enumeration of every bond and green configuration.
pub fn verify_gfree_bk<W: GridWeight>(
    g: &FiniteGraph,
    e1: &ConnectionSpec,
    e2: &ConnectionSpec,
    grid: &[GridPoint],
) -> Result<InequalityReport, OracleError> {
    let free_of = |sites: u64| {
        move |g: &FiniteGraph, c: &BondSiteConfig| {
            let o = Occupied::new(g, c.occupied);
            o.reach(sites, u64::MAX) & c.green_or_empty() == 0
        }
    };
    let per_site = |g: &FiniteGraph, _: u64| (0..g.site_count()).map(bit).collect::<Vec<u64>>();
    let s12 = e1.sites() | e2.sites();
    let lhs_free = free_of(s12);
    let lhs = Blocked {
        holds: move |g: &FiniteGraph, c: &BondSiteConfig| {
            lhs_free(g, c) && disjoint_occurrence(g, e1, e2, c.occupied)
        },
        blocks: per_site,
    };
    let e1_free = free_of(e1.sites());
    let first = Blocked {
        holds: move |g: &FiniteGraph, c: &BondSiteConfig| {
            e1_free(g, c) && e1.witnessed(g, c.occupied)
        },
        blocks: per_site,
    };
    let second = Blocked {
        holds: |g: &FiniteGraph, c: &BondSiteConfig| e2.witnessed(g, c.occupied),
        blocks: per_site,
    };
    let cl = census(g, &lhs, GreenMode::Explicit)?;
    let c1 = census(g, &first, GreenMode::Explicit)?;
    let c2 = census(g, &second, GreenMode::Explicit)?;
    let mut rep = InequalityReport::new("gfreebk");
    rep.terms = cl.terms() + c1.terms() + c2.terms();
    for t in tables::<W>(g, grid) {
        let rhs = c1.evaluate(&t) * c2.evaluate(&t);
        rep.record(cl.evaluate(&t).to_f64(), rhs.to_f64());
    }
    Ok(rep)
}
