//! The exact identity and inequality battery run on small graphs.

use lace_core::events::algebra::{Certain, DoublyConnected, GreenFreeConnection};
use lace_core::events::FiniteGraph;
use lace_core::lattice::{LatticeSpec, TorusIndexer};
use lace_core::mc::sample_rng;
use lace_core::oracle::identities::{
    standard_sets, verify_expansion, verify_f2_decomposition, verify_factorization,
    verify_pivotal_equality, verify_taf12, GridPoint, IdentityReport,
};
use lace_core::oracle::inequalities::{
    verify_cut_the_tail, verify_gfree_bk, ConnectionSpec, InequalityReport, MonotoneEvent,
};
use lace_core::oracle::{GreenMode, OracleError};
use rand::Rng;

/// Names of the bundled graphs.
pub const BUNDLED: [&str; 7] = ["path3", "path4", "path5", "cycle4", "torus2x2", "torus3x3", "torus2x2x2"];

/// Graphs small enough for the randomized inequality instances.
pub const INEQUALITY_GRAPHS: [&str; 4] = ["path4", "path5", "cycle4", "torus2x2x2"];

pub fn bundled_graph(name: &str) -> Option<FiniteGraph> {
    let torus = |d: usize, s: usize| {
        let spec = LatticeSpec::nearest_neighbour(d, s).ok()?;
        TorusIndexer::new(&spec).finite_graph().ok()
    };
    match name {
        "path3" => Some(FiniteGraph::path(3)),
        "path4" => Some(FiniteGraph::path(4)),
        "path5" => Some(FiniteGraph::path(5)),
        "cycle4" => Some(FiniteGraph::cycle(4)),
        "torus2x2" => torus(2, 2),
        "torus3x3" => torus(2, 3),
        "torus2x2x2" => torus(3, 2),
        _ => None,
    }
}

fn bit(i: usize) -> u64 {
    1 << i
}

fn neighbourhood(g: &FiniteGraph, v: usize) -> u64 {
    g.bonds().iter().fold(bit(v), |m, &(a, b)| {
        if a == v {
            m | bit(b)
        } else if b == v {
            m | bit(a)
        } else {
            m
        }
    })
}

fn merge(into: &mut Vec<IdentityReport>, r: IdentityReport) {
    match into.iter_mut().find(|x| x.identity == r.identity) {
        Some(x) => x.absorb(&r),
        None => into.push(r),
    }
}

/// Every identity check on one graph with origin 0, one report per identity.
pub fn identity_suite(g: &FiniteGraph, grid: &[GridPoint]) -> Result<Vec<IdentityReport>, OracleError> {
    let mut out = Vec::new();
    let n = g.site_count();
    let far = n - 1;
    let [a, b] = verify_factorization::<f64, _, _>(g, 0, bit(0), &Certain, &Certain, GreenMode::Analytic, grid)?;
    merge(&mut out, a);
    merge(&mut out, b);
    for bond in 0..g.bond_count().min(2) {
        let (u, v) = g.bond(bond);
        let e = DoublyConnected(0, u);
        let f = GreenFreeConnection(v, far);
        for r in verify_factorization::<f64, _, _>(g, bond, bit(u), &e, &f, GreenMode::Analytic, grid)? {
            merge(&mut out, r);
        }
    }
    for a in [bit(0), neighbourhood(g, 0)] {
        if a != g.all_sites() {
            merge(&mut out, verify_pivotal_equality::<f64>(g, a, grid)?);
        }
    }
    let e = verify_expansion::<f64>(g, 0, grid)?;
    merge(&mut out, e.expan0);
    merge(&mut out, e.taueq14);
    merge(&mut out, e.taf12);
    for a in [bit(far), neighbourhood(g, 0)] {
        merge(&mut out, verify_taf12::<f64>(g, 0, a, grid)?);
    }
    let pairs: Vec<(usize, usize)> = (0..n).map(|x| (0, x)).collect();
    merge(&mut out, verify_f2_decomposition::<f64>(g, &pairs, &standard_sets(g, 0), grid)?);
    Ok(out)
}

/// One random cut-the-tail instance on `g` drawn from the stream `(seed, index)`.
pub fn cut_the_tail_instance(g: &FiniteGraph, seed: u64, index: u64, grid: &[GridPoint]) -> Result<InequalityReport, OracleError> {
    let mut rng = sample_rng(seed, index);
    let e = MonotoneEvent::random(g, &mut rng);
    let bond = rng.gen_range(0..g.bond_count());
    let (u, v) = g.bond(bond);
    let a = bit(u) | (rng.gen::<u64>() & g.all_sites() & !bit(v));
    let x = rng.gen_range(0..g.site_count());
    verify_cut_the_tail::<f64, _>(g, u, v, a, &e, x, grid)
}

/// One random G-free BK instance on `g`.
pub fn gfree_bk_instance(g: &FiniteGraph, seed: u64, index: u64, grid: &[GridPoint]) -> Result<InequalityReport, OracleError> {
    let mut rng = sample_rng(seed, index);
    let e1 = ConnectionSpec::random(g, &mut rng);
    let e2 = ConnectionSpec::random(g, &mut rng);
    verify_gfree_bk::<f64>(g, &e1, &e2, grid)
}

/// `instances` random instances of each inequality, spread round-robin over `graphs`.
pub fn inequality_suite(graphs: &[FiniteGraph], instances: usize, seed: u64, grid: &[GridPoint]) -> Result<Vec<InequalityReport>, OracleError> {
    let mut cut: Option<InequalityReport> = None;
    let mut bk: Option<InequalityReport> = None;
    let fold = |acc: &mut Option<InequalityReport>, r: InequalityReport| match acc {
        Some(t) => t.absorb(&r),
        None => *acc = Some(r),
    };
    for i in 0..instances {
        let g = &graphs[i % graphs.len()];
        fold(&mut cut, cut_the_tail_instance(g, seed, 2 * i as u64, grid)?);
        fold(&mut bk, gfree_bk_instance(g, seed, 2 * i as u64 + 1, grid)?);
    }
    Ok(cut.into_iter().chain(bk).collect())
}
