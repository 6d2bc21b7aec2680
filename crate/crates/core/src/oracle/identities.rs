//! Exact checks of the one-M expansion identities and the event equalities
//! behind them.
//!
//! Every check tallies configurations once and compares both sides at each
//! point of a (p, h) grid. Residuals are absolute differences of probabilities.

use std::collections::{BTreeMap, HashMap};

use num_rational::BigRational;
use serde::Serialize;

use super::census::{BlockTally, Census, DenseTally, Tally, WeightClass, WeightTable};
use super::{
    census, census_of, for_submasks, guard, tagged_census_of, two_point_censuses, GreenMode,
    OracleError,
};
use crate::events::algebra::{
    bond_event, And, Complement, Fixed, Restricted, SiteSetFn, TildeCluster,
};
use crate::events::{
    bit, bridges, Bits, Event, FEvaluator, FGeometry, FiniteGraph, Occupied, Restriction,
};
use crate::scalar::{exact_from_f64, Weight};

/// Default tolerance of the identity checks.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Budget on enumerated terms for the nested expansion check.
pub const EXPANSION_BUDGET_LOG2: u32 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub p: f64,
    pub h: f64,
}

pub const FIELD_GRID: [f64; 4] = [0.0, 0.05, 0.2, 1.0];

/// p ∈ {0.1, …, 0.9} × h ∈ {0, 0.05, 0.2, 1}.
pub fn acceptance_grid() -> Vec<GridPoint> {
    (1..=9)
        .flat_map(|i| {
            FIELD_GRID.iter().map(move |&h| GridPoint {
                p: i as f64 / 10.0,
                h,
            })
        })
        .collect()
}

/// As [`acceptance_grid`] with p = 0 added.
pub fn invariant_grid() -> Vec<GridPoint> {
    (0..=9)
        .flat_map(|i| {
            FIELD_GRID.iter().map(move |&h| GridPoint {
                p: i as f64 / 10.0,
                h,
            })
        })
        .collect()
}

/// Weights that can be built from a grid point.
pub trait GridWeight: Weight {
    /// (p, z = e^{−h}).
    fn at(pt: GridPoint) -> (Self, Self);
}

impl GridWeight for f64 {
    fn at(pt: GridPoint) -> (f64, f64) {
        (pt.p, (-pt.h).exp())
    }
}

/// The rational values are the exact binary values of p and e^{−h}.
impl GridWeight for BigRational {
    fn at(pt: GridPoint) -> (Self, Self) {
        (exact_from_f64(pt.p), exact_from_f64((-pt.h).exp()))
    }
}

pub fn tables<W: GridWeight>(g: &FiniteGraph, grid: &[GridPoint]) -> Vec<WeightTable<W>> {
    grid.iter()
        .map(|&pt| {
            let (p, z) = W::at(pt);
            WeightTable::new(p, z, g.bond_count(), g.site_count())
        })
        .collect()
}

/// Outcome of one identity check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub identity: String,
    pub residual: f64,
    pub terms: u64,
    pub tolerance: f64,
    pub points: usize,
    pub pass: bool,
}

impl IdentityReport {
    pub fn new(identity: &str, residual: f64, terms: u64, points: usize) -> Self {
        let pass = residual <= IDENTITY_TOLERANCE;
        Self {
            identity: identity.to_string(),
            residual,
            terms,
            tolerance: IDENTITY_TOLERANCE,
            points,
            pass,
        }
    }

    /// Combines two checks of the same identity.
    pub fn absorb(&mut self, other: &IdentityReport) {
        self.residual = self.residual.max(other.residual);
        self.terms += other.terms;
        self.points += other.points;
        self.pass = self.residual <= self.tolerance;
    }
}

fn diff<W: Weight>(a: &W, b: &W) -> f64 {
    (a.clone() - b.clone()).abs_val().to_f64()
}

/// Checks the factorization lemma for one bond, set A and events E, F:
/// ⟨I[E on C̃ ∧ F in complement of C̃ ∧ b occupied]⟩ = p ⟨I[E on C̃] ⟨I[F in complement of C̃]⟩⟩,
/// where C̃ = C̃^{b}(A), and the analogue without "b occupied" and p.
/// Returns the two reports in that order.
pub fn verify_factorization<W, E, F>(
    g: &FiniteGraph,
    bond: usize,
    a: u64,
    e: &E,
    f: &F,
    mode: GreenMode,
    grid: &[GridPoint],
) -> Result<[IdentityReport; 2], OracleError>
where
    W: GridWeight,
    E: Event,
    F: Event,
{
    let all = g.all_sites();
    let tilde = TildeCluster { bond, a };
    let e_on = Restricted {
        event: e,
        set: TildeCluster { bond, a },
        how: Restriction::On,
        exclude: Some(bond),
    };
    let f_in = Restricted {
        event: f,
        set: Complement(TildeCluster { bond, a }),
        how: Restriction::In,
        exclude: Some(bond),
    };
    let joint = And(e_on, f_in);
    let lhs_free = census(g, &joint, mode)?;
    let occupied = bond_event(move |_, occ| occ & bit(bond) != 0);
    let lhs_occ = census(g, &And(&joint, occupied), mode)?;

    let e_on = Restricted {
        event: e,
        set: TildeCluster { bond, a },
        how: Restriction::On,
        exclude: Some(bond),
    };
    let outer = tagged_census_of(g, &e_on, |occ| tilde.set(g, occ), g.all_bonds(), all, mode)?;
    let mut inner = Vec::with_capacity(outer.len());
    let mut terms = lhs_free.terms() + lhs_occ.terms();
    for (s, c) in &outer {
        let rest = all & !s;
        let f_fixed = Restricted {
            event: f,
            set: Fixed(rest),
            how: Restriction::In,
            exclude: Some(bond),
        };
        let ci = census_of(g, &f_fixed, g.bonds_inside(rest) & !bit(bond), rest, mode)?;
        terms += c.terms() + ci.terms();
        inner.push(ci);
    }

    let mut r_occ: f64 = 0.0;
    let mut r_free: f64 = 0.0;
    for t in tables::<W>(g, grid) {
        let nested = W::sum(
            outer
                .iter()
                .zip(&inner)
                .map(|((_, c), ci)| c.evaluate(&t) * ci.evaluate(&t)),
        );
        let rhs_occ = t.p().clone() * nested.clone();
        r_occ = r_occ.max(diff(&lhs_occ.evaluate(&t), &rhs_occ));
        r_free = r_free.max(diff(&lhs_free.evaluate(&t), &nested));
    }
    Ok([
        IdentityReport::new("cond0", r_occ, terms, grid.len()),
        IdentityReport::new("cond0-unoccupied", r_free, terms, grid.len()),
    ])
}

/// Pointwise check that {(a′, a) pivotal for y → A} equals
/// {a ↔ A on C̃^{a,a′}(A) and y ↔ a′ in the complement of C̃^{a,a′}(A)}
/// for every directed bond and every y ∉ A. The residual is the total
/// probability of disagreement, maximised over the grid. Pivotality is taken
/// from the event definition: y ↔ A with the bond occupied, not with it
/// vacant, and y on the a′ side.
pub fn verify_pivotal_equality<W: GridWeight>(
    g: &FiniteGraph,
    a: u64,
    grid: &[GridPoint],
) -> Result<IdentityReport, OracleError> {
    let nb = g.bond_count() as u32;
    guard(nb, 0)?;
    let all = g.all_sites();
    let ys = all & !a;
    let tally = for_submasks(
        g.all_bonds(),
        || Tally::new(nb),
        |t, occ| {
            t.add_terms(1);
            let mut bad = 0u64;
            for b in 0..g.bond_count() {
                let without = Occupied::new(g, occ & !bit(b));
                let with = Occupied::new(g, occ | bit(b));
                let s = without.reach(a, all);
                let (p, q) = g.bond(b);
                for (ap, aa) in [(p, q), (q, p)] {
                    let side = without.cluster(ap);
                    for y in Bits(ys) {
                        let e = with.cluster(y) & a != 0
                            && without.cluster(y) & a == 0
                            && side & bit(y) != 0;
                        let f = s & bit(aa) != 0 && without.reach(bit(y), all & !s) & bit(ap) != 0;
                        if e != f {
                            bad += 1;
                        }
                    }
                }
            }
            if bad > 0 {
                t.add(WeightClass::new(occ.count_ones(), 0, &[]), bad);
            }
        },
        |mut x, y| {
            x.merge(y);
            x
        },
    );
    let c = tally.finish();
    let residual = tables::<W>(g, grid)
        .iter()
        .map(|t| c.evaluate(t).to_f64().abs())
        .fold(0.0, f64::max);
    Ok(IdentityReport::new(
        "pivotal-equality",
        residual,
        c.terms(),
        grid.len(),
    ))
}

/// Reports of the expansion check at one origin, maximised over targets x.
#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub expan0: IdentityReport,
    pub taueq14: IdentityReport,
    pub taf12: IdentityReport,
    /// Number of distinct (v₀, C̃) pairs in the outer sum.
    pub outer_sets: usize,
}

/// Outer tallies: E₀′(0, x) per x, and E₀″(0, u₀, v₀) grouped by (v₀, C̃).
struct Outer {
    e0: Vec<DenseTally>,
    grouped: HashMap<(usize, u64), Vec<u64>>,
}

/// Per (v₀, C̃, x) censuses of F₁ and F₂.
struct Inner {
    f1: Vec<DenseTally>,
    f2: Vec<BlockTally>,
}

/// Verifies, for every x, the two-term identity
/// τ(0,x) = ⟨I[E₀′(0,x)]⟩ + p Σ ⟨I[E₀″(0,u₀,v₀)] τ^{C̃₀}(v₀,x)⟩,
/// the four-term identity obtained by writing τ^{C̃₀} = τ − (⟨F₁⟩ − ⟨F₂⟩),
/// and that bracket identity itself for each C̃₀ met in the outer sum.
pub fn verify_expansion<W: GridWeight>(
    g: &FiniteGraph,
    origin: usize,
    grid: &[GridPoint],
) -> Result<ExpansionReport, OracleError> {
    let n = g.site_count();
    let nb = g.bond_count() as u32;
    let all = g.all_sites();
    let budget = (n as u64 + 2) << nb;
    if nb > super::ENUMERATION_LIMIT_LOG2 || budget > 1u64 << EXPANSION_BUDGET_LOG2 {
        return Err(OracleError::TooLarge {
            bonds: nb,
            sites: 0,
            log2: 64 - budget.leading_zeros(),
            limit: EXPANSION_BUDGET_LOG2,
        });
    }

    let outer = for_submasks(
        g.all_bonds(),
        || Outer {
            e0: vec![DenseTally::new(nb, n); n],
            grouped: HashMap::new(),
        },
        |o, occ| {
            let a = occ.count_ones();
            let c0 = Occupied::new(g, occ).cluster(origin);
            let two = Occupied::new(g, occ & !bridges(g, occ)).cluster(origin);
            for x in Bits(two) {
                o.e0[x].add(a, c0.count_ones());
            }
            for b in Bits(g.bonds_touching(c0)) {
                let (s, two_b) = if occ & bit(b) == 0 {
                    (c0, two)
                } else {
                    let rest = occ & !bit(b);
                    (
                        Occupied::new(g, rest).cluster(origin),
                        Occupied::new(g, rest & !bridges(g, rest)).cluster(origin),
                    )
                };
                let (p, q) = g.bond(b);
                for (u0, v0) in [(p, q), (q, p)] {
                    if two_b & bit(u0) != 0 {
                        o.grouped
                            .entry((v0, s))
                            .or_insert_with(|| vec![0; nb as usize + 1])[a as usize] += 1;
                    }
                }
            }
        },
        |mut x, y| {
            for (t, u) in x.e0.iter_mut().zip(&y.e0) {
                t.merge(u);
            }
            for (k, v) in y.grouped {
                let e = x
                    .grouped
                    .entry(k)
                    .or_insert_with(|| vec![0; nb as usize + 1]);
                for (c, d) in e.iter_mut().zip(v) {
                    *c += d;
                }
            }
            x
        },
    );
    let full_terms = 1u64 << nb;
    let mut terms = full_terms;
    let e0: Vec<Census> = outer.e0.iter().map(|t| t.finish(full_terms)).collect();
    let keys: BTreeMap<(usize, u64), Vec<u64>> = outer.grouped.into_iter().collect();

    // Sets C̃ needed for each v₀.
    let mut sets_of: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for &(v0, s) in keys.keys() {
        sets_of.entry(v0).or_default().push(s);
    }

    let tau_full: BTreeMap<usize, Vec<Census>> = std::iter::once(origin)
        .chain(sets_of.keys().copied())
        .map(|v| (v, two_point_censuses(g, v, all)))
        .collect();
    terms += full_terms * tau_full.len() as u64;

    let mut tau_s: HashMap<(usize, u64), Vec<Census>> = HashMap::new();
    let mut f1: HashMap<(usize, u64), Vec<Census>> = HashMap::new();
    let mut f2: HashMap<(usize, u64), Vec<Census>> = HashMap::new();
    for (&v0, sets) in &sets_of {
        for &s in sets {
            let c = two_point_censuses(g, v0, all & !s);
            terms += c[0].terms();
            tau_s.insert((v0, s), c);
        }
        let k = sets.len();
        let inner = for_submasks(
            g.all_bonds(),
            || Inner {
                f1: vec![DenseTally::new(nb, n); k * n],
                f2: vec![BlockTally::new(nb, n); k * n],
            },
            |t, occ| {
                let a = occ.count_ones();
                let o = Occupied::new(g, occ);
                let c = o.cluster(v0);
                let size = c.count_ones();
                for (i, &s) in sets.iter().enumerate() {
                    let r = o.reach(bit(v0), all & !s);
                    let off = c & !r;
                    for x in Bits(off) {
                        t.f1[i * n + x].add(a, size);
                    }
                    if off != 0 {
                        for x in Bits(r) {
                            t.f2[i * n + x].add(a, r.count_ones(), off.count_ones());
                        }
                    }
                }
            },
            |mut x, y| {
                for (p, q) in x.f1.iter_mut().zip(&y.f1) {
                    p.merge(q);
                }
                for (p, q) in x.f2.iter_mut().zip(&y.f2) {
                    p.merge(q);
                }
                x
            },
        );
        terms += full_terms;
        for (i, &s) in sets.iter().enumerate() {
            f1.insert(
                (v0, s),
                (0..n)
                    .map(|x| inner.f1[i * n + x].finish(full_terms))
                    .collect(),
            );
            f2.insert(
                (v0, s),
                (0..n)
                    .map(|x| inner.f2[i * n + x].finish(full_terms))
                    .collect(),
            );
        }
    }

    let mut r_expan: f64 = 0.0;
    let mut r_14: f64 = 0.0;
    let mut r_12: f64 = 0.0;
    for t in tables::<W>(g, grid) {
        let tau: BTreeMap<usize, Vec<W>> = tau_full
            .iter()
            .map(|(&v, cs)| (v, cs.iter().map(|c| c.evaluate(&t)).collect()))
            .collect();
        let outer_w: Vec<W> = keys
            .iter()
            .map(|(&(_, s), counts)| {
                let zs = t.z_pow(s.count_ones());
                W::sum(
                    counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c != 0)
                        .map(|(a, &c)| W::from_count(c) * t.bonds(a as u32, nb)),
                ) * zs
            })
            .collect();
        for x in 0..n {
            let base = e0[x].evaluate(&t);
            let mut two_term = Vec::with_capacity(keys.len());
            let mut four_term = Vec::with_capacity(3 * keys.len());
            for (((v0, s), _), w) in keys.iter().zip(&outer_w) {
                let ts = tau_s[&(*v0, *s)][x].evaluate(&t);
                let g1 = f1[&(*v0, *s)][x].evaluate(&t);
                let g2 = f2[&(*v0, *s)][x].evaluate(&t);
                let tv = tau[v0][x].clone();
                r_12 = r_12.max(diff(&(tv.clone() - ts.clone()), &(g1.clone() - g2.clone())));
                two_term.push(w.clone() * ts);
                four_term.push(w.clone() * tv);
                four_term.push(-(w.clone() * g1));
                four_term.push(w.clone() * g2);
            }
            let lhs = tau[&origin][x].clone();
            let rhs2 = base.clone() + t.p().clone() * W::sum(two_term);
            let rhs4 = base + t.p().clone() * W::sum(four_term);
            r_expan = r_expan.max(diff(&lhs, &rhs2));
            r_14 = r_14.max(diff(&lhs, &rhs4));
        }
    }
    Ok(ExpansionReport {
        expan0: IdentityReport::new("expan0", r_expan, terms, grid.len()),
        taueq14: IdentityReport::new("taueq14", r_14, terms, grid.len()),
        taf12: IdentityReport::new("taf12", r_12, terms, grid.len()),
        outer_sets: keys.len(),
    })
}

/// Checks τ(v,x) − τ^A(v,x) = ⟨I[F₁(v,x;A)]⟩ − ⟨I[F₂(v,x;A)]⟩ for all x, with
/// the F events evaluated through the event layer (analytic green blocks).
pub fn verify_taf12<W: GridWeight>(
    g: &FiniteGraph,
    v: usize,
    a: u64,
    grid: &[GridPoint],
) -> Result<IdentityReport, OracleError> {
    let n = g.site_count();
    let all = g.all_sites();
    guard(g.bond_count() as u32, 0)?;
    let tau = two_point_censuses(g, v, all);
    let tau_a = two_point_censuses(g, v, all & !a);
    let mut terms = tau[0].terms() + tau_a[0].terms();
    let mut f = Vec::with_capacity(n);
    for x in 0..n {
        let c1 = census(
            g,
            &crate::events::algebra::FEvent { which: 1, v, x, a },
            GreenMode::Analytic,
        )?;
        let c2 = census(
            g,
            &crate::events::algebra::FEvent { which: 2, v, x, a },
            GreenMode::Analytic,
        )?;
        terms += c1.terms() + c2.terms();
        f.push((c1, c2));
    }
    let mut r: f64 = 0.0;
    for t in tables::<W>(g, grid) {
        for x in 0..n {
            let lhs = tau[x].evaluate(&t) - tau_a[x].evaluate(&t);
            let rhs = f[x].0.evaluate(&t) - f[x].1.evaluate(&t);
            r = r.max(diff(&lhs, &rhs));
        }
    }
    Ok(IdentityReport::new("taf12", r, terms, grid.len()))
}

/// Pointwise check of F₂ = (F₃ ⊔ F₄) \ F₅ together with F₅ ⊆ F₃ ∪ F₄ and
/// F₃ ∩ F₄ = ∅, for each (v, x) pair and each set A. Graphs of at most eight
/// sites enumerate every green set; larger graphs enumerate the patterns of
/// the F events' green blocks. The residual is the probability of any
/// disagreement, maximised over the grid.
pub fn verify_f2_decomposition<W: GridWeight>(
    g: &FiniteGraph,
    pairs: &[(usize, usize)],
    sets: &[u64],
    grid: &[GridPoint],
) -> Result<IdentityReport, OracleError> {
    let n = g.site_count() as u32;
    let nb = g.bond_count() as u32;
    let exhaustive = n <= 8;
    guard(nb, if exhaustive { n } else { 0 })?;
    let all = g.all_sites();
    let check = |f2: bool, f3: bool, f4: bool, f5: bool| {
        f2 == ((f3 || f4) && !f5) && !(f3 && f4) && (!f5 || f3 || f4)
    };
    let tally = for_submasks(
        g.all_bonds(),
        || Tally::new(nb),
        |t, occ| {
            let a = occ.count_ones();
            let o = Occupied::new(g, occ);
            for &(v, x) in pairs {
                let geo = FGeometry::new(g, &o, occ, v, x);
                for &s in sets {
                    let ev = FEvaluator::new(g, &geo, &o, v, x, s);
                    if exhaustive {
                        let mut green = 0u64;
                        loop {
                            t.add_terms(1);
                            if !check(ev.f2(green), ev.f3(green), ev.f4(green), ev.f5(green)) {
                                let k = green.count_ones();
                                t.add(WeightClass::simple(a, n - k, k), 1);
                            }
                            if green == all {
                                break;
                            }
                            green = green.wrapping_sub(all) & all;
                        }
                    } else {
                        let blocks = ev.green_blocks();
                        let mut sizes = Vec::with_capacity(blocks.len());
                        for pattern in 0u64..(1 << blocks.len()) {
                            t.add_terms(1);
                            let mut green = 0;
                            let mut clear = 0;
                            sizes.clear();
                            for (i, &b) in blocks.iter().enumerate() {
                                if pattern & (1 << i) != 0 {
                                    green |= b;
                                    sizes.push(b.count_ones());
                                } else {
                                    clear += b.count_ones();
                                }
                            }
                            if !check(ev.f2(green), ev.f3(green), ev.f4(green), ev.f5(green)) {
                                t.add(WeightClass::new(a, clear, &sizes), 1);
                            }
                        }
                    }
                }
            }
        },
        |mut x, y| {
            x.merge(y);
            x
        },
    );
    let c = tally.finish();
    let residual = tables::<W>(g, grid)
        .iter()
        .map(|t| c.evaluate(t).to_f64().abs())
        .fold(0.0, f64::max);
    Ok(IdentityReport::new(
        "f2decomp",
        residual,
        c.terms(),
        grid.len(),
    ))
}

/// Sets A used by the F-decomposition check: ∅, each singleton, the
/// neighbourhood of `v`, and the whole graph.
pub fn standard_sets(g: &FiniteGraph, v: usize) -> Vec<u64> {
    let mut out = vec![0u64];
    out.extend((0..g.site_count()).map(bit));
    let nbhd = g.bonds().iter().fold(bit(v), |m, &(a, b)| {
        if a == v {
            m | bit(b)
        } else if b == v {
            m | bit(a)
        } else {
            m
        }
    });
    out.push(nbhd);
    out.push(g.all_sites());
    out.sort_unstable();
    out.dedup();
    out
}
