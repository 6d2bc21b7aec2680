use lace_core::events::algebra::*;
use lace_core::events::*;
use lace_core::lattice::{LatticeSpec, TorusIndexer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn b(i: usize) -> u64 {
    1u64 << i
}

fn set(sites: &[usize]) -> SiteSet {
    SiteSet::from_sites(sites.iter().copied())
}

fn occ_of(g: &FiniteGraph, pairs: &[(usize, usize)]) -> BondSiteConfig {
    BondSiteConfig::bonds(pairs.iter().fold(0, |m, &(x, y)| m | b(g.bond_between(x, y).unwrap())))
}

/// Small graphs used for exhaustive checks.
fn corpus() -> Vec<FiniteGraph> {
    vec![
        FiniteGraph::path(3),
        FiniteGraph::path(5),
        FiniteGraph::cycle(4),
        FiniteGraph::cycle(5),
        FiniteGraph::k4_minus_edge(),
        FiniteGraph::new(5, vec![(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 2)]).unwrap(),
        TorusIndexer::new(&LatticeSpec::nearest_neighbour(2, 2).unwrap()).finite_graph().unwrap(),
    ]
}

#[test]
fn graph_validation_and_json() {
    assert!(matches!(FiniteGraph::new(2, vec![(0, 0)]), Err(EventError::SelfPair(_))));
    assert!(matches!(FiniteGraph::new(2, vec![(0, 1), (1, 0)]), Err(EventError::MultiEdge(_))));
    assert!(matches!(FiniteGraph::new(2, vec![(0, 2)]), Err(EventError::BadSite(2))));
    let g = FiniteGraph::k4_minus_edge();
    let text = g.to_json();
    assert_eq!(text, r#"{"sites":4,"bonds":[[0,1],[0,2],[0,3],[1,2],[1,3]]}"#);
    assert_eq!(FiniteGraph::from_json(&text).unwrap(), g);
    assert!(FiniteGraph::from_json(r#"{"sites":2,"bonds":[[0,1],[0,1]]}"#).is_err());
    let c = BondSiteConfig::with_green(0x1b, 0x4);
    assert_eq!(c.to_hex(), "1b:4");
    assert_eq!(BondSiteConfig::from_hex("1b:4").unwrap(), c);
    assert_eq!(BondSiteConfig::from_hex("0x7").unwrap(), BondSiteConfig::bonds(7));
    assert!(BondSiteConfig::from_hex("zz").is_err());
}

#[test]
fn cluster_examples() {
    let g = FiniteGraph::path(3);
    assert_eq!(cluster(&g, &BondSiteConfig::bonds(0), 1), set(&[1]));
    assert_eq!(cluster(&g, &BondSiteConfig::bonds(0b11), 0), set(&[0, 1, 2]));
    assert_eq!(cluster(&g, &BondSiteConfig::bonds(0b10), 0), set(&[0]));
}

#[test]
fn restricted_cluster_examples() {
    let g = FiniteGraph::path(3);
    let all = BondSiteConfig::bonds(0b11);
    assert_eq!(restricted_cluster(&g, &BondSiteConfig::bonds(0b01), 1, set(&[0])), set(&[0, 1]));
    assert_eq!(restricted_cluster(&g, &all, 1, set(&[0])), set(&[0, 1]));
    let t = FiniteGraph::cycle(3);
    assert_eq!(restricted_cluster(&t, &BondSiteConfig::bonds(0b111), t.bond_between(0, 1).unwrap(), set(&[0])), set(&[0, 1, 2]));
}

#[test]
fn double_connection_examples() {
    let g = FiniteGraph::cycle(4);
    let none = BondSiteConfig::bonds(0);
    assert!(doubly_connected(&g, &none, 2, 2));
    assert!(!doubly_connected(&g, &occ_of(&g, &[(0, 1)]), 0, 1));
    assert!(doubly_connected(&g, &BondSiteConfig::bonds(g.all_bonds()), 0, 2));
}

#[test]
fn connected_in_examples() {
    let g = FiniteGraph::path(3);
    let c = BondSiteConfig::bonds(0b11);
    assert!(connected_in(&g, &c, 1, 1, set(&[1])));
    assert!(!connected_in(&g, &c, 1, 1, set(&[0])));
    assert!(!connected_in(&g, &c, 0, 2, set(&[0, 2])));
    assert!(connected_in(&g, &c, 0, 2, set(&[0, 1, 2])));
}

#[test]
fn connected_through_examples() {
    let g = FiniteGraph::path(3);
    let c = BondSiteConfig::bonds(0b11);
    assert!(connected_through(&g, &c, 0, 2, SiteSet::all(&g)));
    assert!(!connected_through(&g, &c, 0, 2, SiteSet::EMPTY));
    assert!(connected_through(&g, &c, 0, 2, set(&[1])));
    assert!(connected_through(&g, &c, 1, 1, set(&[1])));
    assert!(!connected_through(&g, &c, 1, 1, set(&[0])));
}

#[test]
fn pivotal_examples() {
    let g = FiniteGraph::path(3);
    let c = BondSiteConfig::bonds(0b11);
    let piv = pivotal_bonds(&g, &c, 0, set(&[2])).unwrap();
    assert_eq!(piv.iter().map(|d| (d.from, d.to)).collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    let cyc = FiniteGraph::cycle(4);
    assert!(pivotal_bonds(&cyc, &BondSiteConfig::bonds(cyc.all_bonds()), 0, set(&[2])).unwrap().is_empty());
    let g = FiniteGraph::new(4, vec![(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
    let piv = pivotal_bonds(&g, &BondSiteConfig::bonds(g.all_bonds()), 0, set(&[3])).unwrap();
    assert_eq!(piv.iter().map(|d| (d.from, d.to)).collect::<Vec<_>>(), vec![(2, 3)]);
    assert_eq!(pivotal_bonds(&g, &BondSiteConfig::bonds(0), 0, set(&[3])), Err(EventError::NotConnected(0)));
    assert_eq!(pivotal_bonds(&g, &BondSiteConfig::bonds(0), 0, set(&[0])), Ok(vec![]));
}

#[test]
fn sausage_examples() {
    let g = FiniteGraph::path(2);
    let s = sausages(&g, &BondSiteConfig::bonds(1), 0, 1).unwrap();
    assert_eq!(s.iter().map(|x| x.sites).collect::<Vec<_>>(), vec![set(&[0]), set(&[1])]);
    let cyc = FiniteGraph::cycle(4);
    let s = sausages(&cyc, &BondSiteConfig::bonds(cyc.all_bonds()), 0, 2).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].sites, SiteSet::all(&cyc));
    let p = FiniteGraph::path(3);
    let s = sausages(&p, &BondSiteConfig::bonds(0b11), 0, 2).unwrap();
    assert_eq!(s.iter().map(|x| x.sites).collect::<Vec<_>>(), vec![set(&[0]), set(&[1]), set(&[2])]);
    assert!(sausages(&p, &BondSiteConfig::bonds(0b01), 0, 2).is_err());
}

#[test]
fn backbone_examples() {
    let p = FiniteGraph::path(3);
    assert_eq!(backbone(&p, &BondSiteConfig::bonds(0b11), 0, 2), set(&[0, 1, 2]));
    let g = FiniteGraph::new(4, vec![(0, 1), (1, 2), (1, 3)]).unwrap();
    assert_eq!(backbone(&g, &BondSiteConfig::bonds(0b111), 0, 2), set(&[0, 1, 2]));
    assert_eq!(backbone(&p, &BondSiteConfig::bonds(0b01), 0, 2), SiteSet::EMPTY);
}

#[test]
fn restriction_examples() {
    let g = FiniteGraph::cycle(4);
    let c = BondSiteConfig::with_green(0b1011, 0b0110);
    assert_eq!(occurs_on(&g, &c, SiteSet::all(&g), None), c);
    assert_eq!(occurs_in(&g, &c, SiteSet::all(&g), None), c);
    for f in [occurs_on, occurs_in] {
        assert_eq!(f(&g, &c, SiteSet::EMPTY, None), BondSiteConfig::with_green(0, 0));
    }
    // Bonds of the 4-cycle: {0,1},{1,2},{2,3},{0,3}. S = {0}.
    assert_eq!(occurs_on(&g, &c, set(&[0]), None), BondSiteConfig::with_green(0b1001, 0));
    assert_eq!(occurs_in(&g, &c, set(&[0, 1]), None), BondSiteConfig::with_green(0b0001, 0b0010));
    assert_eq!(occurs_on(&g, &c, set(&[0]), Some(0)), BondSiteConfig::with_green(0b1000, 0));
}

/// Menger: x ⇔ y iff connected and no single occupied bond separates them.
fn doubly_connected_by_cuts(g: &FiniteGraph, occ: u64, x: usize, y: usize) -> bool {
    if x == y {
        return true;
    }
    let c = BondSiteConfig::bonds(occ);
    connected(g, &c, x, y)
        && (0..g.bond_count())
            .filter(|&e| occ & b(e) != 0)
            .all(|e| connected(g, &BondSiteConfig::bonds(occ & !b(e)), x, y))
}

/// Simple occupied paths from u to x, as bond sets.
fn simple_paths(g: &FiniteGraph, occ: u64, u: usize, x: usize) -> Vec<u64> {
    fn go(g: &FiniteGraph, occ: u64, at: usize, x: usize, seen: u64, used: u64, out: &mut Vec<u64>) {
        if at == x {
            out.push(used);
            return;
        }
        for (e, &(p, q)) in g.bonds().iter().enumerate() {
            if occ & b(e) == 0 || (p != at && q != at) {
                continue;
            }
            let nxt = if p == at { q } else { p };
            if seen & b(nxt) == 0 {
                go(g, occ, nxt, x, seen | b(nxt), used | b(e), out);
            }
        }
    }
    let mut out = Vec::new();
    go(g, occ, u, x, b(u), 0, &mut out);
    out
}

fn backbone_by_paths(g: &FiniteGraph, occ: u64, x: usize, y: usize) -> SiteSet {
    let c = BondSiteConfig::bonds(occ);
    if !connected(g, &c, x, y) {
        return SiteSet::EMPTY;
    }
    let mut out = 0;
    for u in 0..g.site_count() {
        let ok = simple_paths(g, occ, u, x)
            .iter()
            .any(|&p| connected(g, &BondSiteConfig::bonds(occ & !p), u, y));
        if ok {
            out |= b(u);
        }
    }
    SiteSet(out)
}

#[test]
fn structural_invariants_exhaustive() {
    for g in corpus() {
        let n = g.site_count();
        for occ in 0..(1u64 << g.bond_count()) {
            let c = BondSiteConfig::bonds(occ);
            for x in 0..n {
                for y in 0..n {
                    let dc = doubly_connected(&g, &c, x, y);
                    assert_eq!(dc, doubly_connected_by_cuts(&g, occ, x, y), "{g:?} {occ:#x} {x} {y}");
                    let bb = backbone(&g, &c, x, y);
                    assert_eq!(bb, backbone_by_paths(&g, occ, x, y), "{g:?} {occ:#x} {x} {y}");
                    assert_eq!(bb.0 & !cluster(&g, &c, x).0, 0);
                    if !connected(&g, &c, x, y) {
                        continue;
                    }
                    if dc {
                        assert!(pivotal_bonds(&g, &c, x, set(&[y])).unwrap().is_empty());
                    }
                    for s in sausages(&g, &c, x, y).unwrap() {
                        let inside = occurs_in(&g, &c, s.sites, None);
                        assert!(doubly_connected(&g, &inside, s.left, s.right));
                    }
                }
                for a in 1..(1u64 << n) {
                    let a = SiteSet(a);
                    for y in 0..n {
                        if connected_through(&g, &c, x, y, a) {
                            assert!(connected(&g, &c, x, y));
                        }
                    }
                    let slow = pivotal_bonds(&g, &c, x, a);
                    assert_eq!(slow, pivotal_bonds_fast(&g, &c, x, a));
                    if let Ok(chain) = slow {
                        let mut prev = 0u64;
                        for d in &chain {
                            let cut = BondSiteConfig::bonds(occ & !b(d.bond));
                            let side = cluster(&g, &cut, x);
                            assert_eq!(side.0 & a.0, 0);
                            assert!(side.contains(d.from) && !side.contains(d.to));
                            assert_eq!(prev & !side.0, 0, "x-sides nested");
                            prev = side.0;
                        }
                        if let Some(first) = chain.first() {
                            assert!(doubly_connected(&g, &c, x, first.from));
                        }
                    }
                }
            }
        }
    }
}

/// A random event given by a truth table over (bonds, greens).
struct TableEvent {
    bits: Vec<bool>,
    nb: usize,
}

impl Event for TableEvent {
    fn holds(&self, _: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        self.bits[(cfg.occupied | (cfg.green_or_empty() << self.nb)) as usize]
    }
}

fn random_table(g: &FiniteGraph, rng: &mut ChaCha8Rng) -> TableEvent {
    let n = 1usize << (g.bond_count() + g.site_count());
    TableEvent { bits: (0..n).map(|_| rng.gen_bool(0.5)).collect(), nb: g.bond_count() }
}

#[test]
fn occurs_on_preserves_set_operations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for g in [FiniteGraph::path(4), FiniteGraph::cycle(4), FiniteGraph::k4_minus_edge()] {
        let (nb, n) = (g.bond_count(), g.site_count());
        for _ in 0..10 {
            let e = random_table(&g, &mut rng);
            let f = random_table(&g, &mut rng);
            for s in 0..(1u64 << n) {
                for occ in 0..(1u64 << nb) {
                    for green in 0..(1u64 << n) {
                        let c = BondSiteConfig::with_green(occ, green);
                        for how in [Restriction::On, Restriction::In] {
                            let r = restrict(&g, &c, SiteSet(s), None, how);
                            let not_e = Not(&e);
                            let e_or_f = Or(&e, &f);
                            assert_eq!(!e.holds(&g, &r), not_e.holds(&g, &r));
                            assert_eq!(e_or_f.holds(&g, &r), e.holds(&g, &r) || f.holds(&g, &r));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn nested_occurs_in_is_intersection() {
    let g = FiniteGraph::k4_minus_edge();
    let n = g.site_count();
    for occ in 0..(1u64 << g.bond_count()) {
        for green in 0..(1u64 << n) {
            let c = BondSiteConfig::with_green(occ, green);
            for s in 0..(1u64 << n) {
                for t in 0..(1u64 << n) {
                    let nested = occurs_in(&g, &occurs_in(&g, &c, SiteSet(t), None), SiteSet(s), None);
                    assert_eq!(nested, occurs_in(&g, &c, SiteSet(s & t), None));
                }
            }
        }
    }
}

#[test]
fn nested_occurs_on_literal_reading() {
    // A bond from S \ T to T \ S touches both sets but not S ∩ T, so the
    // nesting rule for "on" fails under the literal deterministic-set reading.
    let g = FiniteGraph::path(2);
    let c = BondSiteConfig::with_green(1, 0);
    let nested = occurs_on(&g, &occurs_on(&g, &c, set(&[1]), None), set(&[0]), None);
    let direct = occurs_on(&g, &c, SiteSet::EMPTY, None);
    assert_ne!(nested, direct);
    // It holds whenever no bond joins S \ T to T \ S.
    let g = FiniteGraph::cycle(4);
    for occ in 0..(1u64 << 4) {
        let c = BondSiteConfig::with_green(occ, 0b0101);
        for s in 0..16u64 {
            for t in 0..16u64 {
                let crossing = g.bonds().iter().any(|&(p, q)| {
                    let (ps, pt, qs, qt) = (s & b(p) != 0, t & b(p) != 0, s & b(q) != 0, t & b(q) != 0);
                    (ps && !pt && qt && !qs) || (qs && !qt && pt && !ps)
                });
                if !crossing {
                    let nested = occurs_on(&g, &occurs_on(&g, &c, SiteSet(t), None), SiteSet(s), None);
                    assert_eq!(nested, occurs_on(&g, &c, SiteSet(s & t), None));
                }
            }
        }
    }
}

#[test]
fn f_events_need_green_bitset() {
    let g = FiniteGraph::path(3);
    assert_eq!(event_f1(&g, &BondSiteConfig::bonds(3), 0, 2, set(&[1])), Err(EventError::NoGreen));
}

#[test]
fn f_events_without_green() {
    for g in corpus() {
        let n = g.site_count();
        for occ in 0..(1u64 << g.bond_count()) {
            let c = BondSiteConfig::with_green(occ, 0);
            for v in 0..n {
                for x in 0..n {
                    for a in [0u64, 1, g.all_sites(), b(x)] {
                        let a = SiteSet(a);
                        assert!(!event_f2(&g, &c, v, x, a).unwrap());
                        assert!(!event_f3(&g, &c, v, x, a).unwrap());
                        assert!(!event_f4(&g, &c, v, x, a).unwrap());
                        assert!(!event_f5(&g, &c, v, x, a).unwrap());
                    }
                }
            }
        }
    }
}

#[test]
fn f_events_on_one_site() {
    let g = FiniteGraph::new(1, vec![]).unwrap();
    for (a, green, f1) in [(1u64, 0u64, true), (1, 1, false), (0, 0, false), (0, 1, false)] {
        let c = BondSiteConfig::with_green(0, green);
        let a = SiteSet(a);
        assert_eq!(event_f1(&g, &c, 0, 0, a).unwrap(), f1, "A={a:?} green={green}");
        for f in [event_f2, event_f3, event_f4, event_f5] {
            assert!(!f(&g, &c, 0, 0, a).unwrap(), "A={a:?} green={green}");
        }
    }
}

#[test]
fn f2_decomposition_pointwise() {
    for g in corpus() {
        let n = g.site_count();
        for occ in 0..(1u64 << g.bond_count()) {
            for green in 0..(1u64 << n) {
                let c = BondSiteConfig::with_green(occ, green);
                for v in 0..n {
                    for x in 0..n {
                        for a in [0u64, b(v), b((v + 1) % n), g.all_sites() & !b(x)] {
                            let a = SiteSet(a);
                            let f2 = event_f2(&g, &c, v, x, a).unwrap();
                            let f3 = event_f3(&g, &c, v, x, a).unwrap();
                            let f4 = event_f4(&g, &c, v, x, a).unwrap();
                            let f5 = event_f5(&g, &c, v, x, a).unwrap();
                            assert!(!(f3 && f4));
                            assert!(!(f2 && f5));
                            assert_eq!(f2, (f3 || f4) && !f5, "{g:?} {c:?} v={v} x={x} A={a:?}");
                        }
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pivotal_fast_path_on_random_graphs(n in 2usize..9, edges in proptest::collection::vec((0usize..9, 0usize..9), 1..16), occ: u64, x in 0usize..9, a: u64) {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (p, q) in edges {
            let (p, q) = (p % n, q % n);
            if p != q && !pairs.contains(&(p, q)) && !pairs.contains(&(q, p)) {
                pairs.push((p, q));
            }
        }
        let g = FiniteGraph::new(n, pairs).unwrap();
        let c = BondSiteConfig::bonds(occ & g.all_bonds());
        let a = SiteSet(a & g.all_sites());
        prop_assert_eq!(pivotal_bonds(&g, &c, x % n, a), pivotal_bonds_fast(&g, &c, x % n, a));
    }
}
