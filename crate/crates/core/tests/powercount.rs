use lace_core::powercount::*;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn deg0(g: &FeynmanGraph, d: f64) -> f64 {
    degree_ir(g, d, MassMode::AllMassless).unwrap().unwrap().value
}

fn corpus(n: usize, seed: u64) -> Vec<FeynmanGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| FeynmanGraph::random(&mut rng, 5, 8, 0.3)).collect()
}

fn bridgeless_corpus(n: usize, seed: u64) -> Vec<FeynmanGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(|| FeynmanGraph::random(&mut rng, 5, 8, 0.3))
        .filter(|g| g.is_bridgeless())
        .take(n)
        .collect()
}

/// Spanning-tree count by the matrix-tree theorem; self-loops drop out.
fn kirchhoff(g: &FeynmanGraph) -> usize {
    let v = g.vertex_count();
    if v == 1 {
        return 1;
    }
    let mut lap = vec![vec![0.0f64; v]; v];
    for l in g.lines() {
        if l.a != l.b {
            lap[l.a][l.a] += 1.0;
            lap[l.b][l.b] += 1.0;
            lap[l.a][l.b] -= 1.0;
            lap[l.b][l.a] -= 1.0;
        }
    }
    let mut m: Vec<Vec<f64>> = lap[1..].iter().map(|r| r[1..].to_vec()).collect();
    let n = v - 1;
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c].abs() < 1e-12 {
            return 0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for i in c + 1..n {
            let f = m[i][c] / m[c][c];
            for k in c..n {
                m[i][k] -= f * m[c][k];
            }
        }
    }
    det.round() as usize
}

#[test]
fn basis_counts() {
    assert_eq!(loop_bases(&FeynmanGraph::bubble()).unwrap().len(), 2);
    assert_eq!(loop_bases(&FeynmanGraph::cycle(3)).unwrap().len(), 3);
    let theta = FeynmanGraph::massless(2, &[(0, 1), (0, 1), (1, 0)]).unwrap();
    assert_eq!(theta.loops(), 2);
    assert_eq!(loop_bases(&theta).unwrap().len(), 3);
    assert_eq!(
        FeynmanGraph::massless(3, &[(0, 1)]),
        Err(PowerCountError::Disconnected)
    );
    assert_eq!(
        FeynmanGraph::massless(2, &[(0, 2)]),
        Err(PowerCountError::BadEndpoint(2))
    );
}

#[test]
fn bases_satisfy_conservation() {
    for g in corpus(200, 1) {
        let bases = loop_bases(&g).unwrap();
        assert_eq!(bases.len(), kirchhoff(&g));
        for b in &bases {
            assert_eq!(b.lines.len(), g.loops());
            for (j, &l) in b.lines.iter().enumerate() {
                let unit: Vec<i8> = (0..g.loops()).map(|i| (i == j) as i8).collect();
                assert_eq!(b.coefficients[l], unit);
            }
            // Momentum in equals momentum out at every vertex.
            for v in 0..g.vertex_count() {
                let mut net = vec![0i32; g.loops()];
                for (i, l) in g.lines().iter().enumerate() {
                    let sign = (l.b == v) as i32 - (l.a == v) as i32;
                    for (n, &c) in net.iter_mut().zip(&b.coefficients[i]) {
                        *n += sign * c as i32;
                    }
                }
                assert!(net.iter().all(|&n| n == 0));
            }
        }
    }
}

#[test]
fn degree_examples() {
    for d in [3.0, 4.0, 7.0] {
        assert_eq!(deg0(&FeynmanGraph::bubble(), d), d - 4.0);
        assert_eq!(deg0(&FeynmanGraph::cycle(3), d), d - 6.0);
        assert_eq!(degree_uv(&FeynmanGraph::bubble(), d).unwrap().unwrap().value, d - 4.0);
    }
    let sq = FeynmanGraph::cycle(4).with_mass(0, Mass::Massive);
    assert_eq!(deg0(&sq, 7.0), -1.0);
    assert_eq!(degree_ir(&sq, 7.0, MassMode::AsLabelled).unwrap().unwrap().value, 1.0);
    let self_loop = FeynmanGraph::massless(1, &[(0, 0)]).unwrap();
    assert_eq!(self_loop.loops(), 1);
    assert_eq!(degree_uv(&self_loop, 7.0).unwrap().unwrap().value, 5.0);
    let tree = FeynmanGraph::massless(2, &[(0, 1)]).unwrap();
    assert!(degree_ir(&tree, 7.0, MassMode::AllMassless).unwrap().is_none());
}

#[test]
fn critical_dimensions() {
    let dc = |g: &FeynmanGraph| critical_dimension(g).unwrap().unwrap();
    assert_eq!(dc(&FeynmanGraph::bubble()), Ratio::from(4));
    assert_eq!(dc(&FeynmanGraph::cycle(3)), Ratio::from(6));
    assert_eq!(dc(&FeynmanGraph::cycle(4)), Ratio::from(8));
    let theta = FeynmanGraph::massless(2, &[(0, 1), (0, 1), (0, 1)]).unwrap();
    // Both loops together fix three lines: 2·3/2 = 3; one loop fixes one line: 2.
    assert_eq!(dc(&theta), Ratio::from(3));
}

#[test]
fn classification_examples() {
    let r = classify(&FeynmanGraph::cycle(3), 7.0, 0.0).unwrap();
    assert_eq!(r.verdict, Verdict::ConvergentAllMu);
    assert_eq!(r.d_c, Some((6, 1)));
    let r = classify(&FeynmanGraph::cycle(4).with_mass(0, Mass::Massive), 7.0, 0.01).unwrap();
    assert_eq!(r.verdict, Verdict::ConvergentPositiveMuOnly { rate_exponent: -1.0, log_power: 1 });
    let mu: f64 = 0.01;
    assert!((r.rate_bound.unwrap() - mu.powi(-1) * mu.ln().abs()).abs() < 1e-9);
    let r = classify(&FeynmanGraph::bubble(), 3.0, 0.0).unwrap();
    assert_eq!(r.verdict, Verdict::DivergentEvenPositiveMu);
    assert!(r.rate_bound.is_none());
}

#[test]
fn construction_examples() {
    let b = FeynmanGraph::bubble();
    let c1 = construct(&b, Construction::C1 { line: 0 }).unwrap();
    assert_eq!((c1.vertex_count(), c1.line_count(), c1.loops()), (3, 3, 1));
    for d in [5.0, 7.0, 9.0] {
        assert_eq!(deg0(&c1, d), d - 6.0);
    }
    let c2 = construct(&b, Construction::C2 { first: 0, second: 1 }).unwrap();
    assert_eq!((c2.vertex_count(), c2.line_count(), c2.loops()), (4, 5, 2));
    assert_eq!(c2.lines().last().unwrap().mass, Mass::Massless);
    for d in [3.0, 5.0, 7.0, 9.0] {
        assert!(deg0(&c2, d) >= (d - 4.0) + (d - 6.0).min(0.0));
    }
    assert!(matches!(construct(&b, Construction::C2 { first: 1, second: 1 }), Err(PowerCountError::BadPlacement(_))));
    // Both new vertices on one line of a self-loop: the result is a bubble
    // inserted on the loop, and the C2 bound fails.
    let self_loop = FeynmanGraph::massless(1, &[(0, 0)]).unwrap();
    let inserted = FeynmanGraph::massless(3, &[(0, 1), (1, 2), (2, 0), (1, 2)]).unwrap();
    assert_eq!(deg0(&self_loop, 7.0), 5.0);
    assert_eq!(deg0(&inserted, 7.0), 3.0);
    assert!(deg0(&inserted, 7.0) < construction_bound(Construction::C2 { first: 0, second: 0 }, 5.0, 7.0));
    let c3 = construct(&b, Construction::C3 { first: (0, 1), second: (2, 4) }).unwrap();
    assert_eq!((c3.vertex_count(), c3.line_count(), c3.loops()), (6, 8, 3));
    assert!(matches!(construct(&b, Construction::C1 { line: 2 }), Err(PowerCountError::BadPlacement(_))));
    // Subdivision keeps the mass on both halves.
    let m = construct(&b.clone().with_mass(0, Mass::Massive), Construction::C1 { line: 0 }).unwrap();
    assert_eq!(m.lines().iter().filter(|l| l.mass == Mass::Massive).count(), 2);
}

#[test]
fn bridges() {
    assert!(FeynmanGraph::cycle(3).is_bridgeless());
    assert!(FeynmanGraph::massless(1, &[(0, 0)]).unwrap().is_bridgeless());
    let g = FeynmanGraph::massless(2, &[(0, 1), (0, 0)]).unwrap();
    assert!(!g.is_bridgeless());
    // The zero-momentum bridge is determined by every H.
    assert_eq!(deg0(&g, 7.0), 3.0);
}

#[test]
fn graph_json() {
    let g = FeynmanGraph::cycle(3).with_mass(1, Mass::Massive);
    let text = serde_json::to_string(&g).unwrap();
    assert_eq!(text, r#"{"vertices":3,"lines":[[0,1,"massless"],[1,2,"massive"],[2,0,"massless"]]}"#);
    let back: FeynmanGraph = serde_json::from_str(&text).unwrap();
    assert_eq!(back, g);
    assert!(serde_json::from_str::<FeynmanGraph>(r#"{"vertices":3,"lines":[[0,1,"massless"]]}"#).is_err());
}

#[test]
fn duality_per_basis() {
    for g in corpus(500, 2) {
        let (l, n) = (g.loops() as i64, g.line_count() as i64);
        for b in loop_bases(&g).unwrap() {
            let table = subset_degrees(&g, &b, MassMode::AllMassless);
            let full = (1u32 << l) - 1;
            for &(h, ir, _) in &table {
                // IR of H against UV of Γ \ H, as affine forms in d.
                let (uv_per, uv_const) = if h == full {
                    (0, 0)
                } else {
                    let uv = table.iter().find(|t| t.0 == full & !h).unwrap().2;
                    (uv.per_dimension, uv.constant)
                };
                assert_eq!(ir.per_dimension, l - uv_per);
                assert_eq!(ir.constant, -2 * n - uv_const);
            }
        }
    }
}

#[test]
fn masses_never_lower_the_degree() {
    for g in corpus(300, 3) {
        for d in [4.0, 7.0] {
            let m = degree_ir(&g, d, MassMode::AsLabelled).unwrap().unwrap().value;
            assert!(m >= deg0(&g, d));
        }
    }
}

#[test]
fn cotrees_reach_the_minimum_over_all_bases() {
    for g in corpus(150, 4) {
        for mode in [MassMode::AllMassless, MassMode::AsLabelled] {
            let cot = degree_ir(&g, 7.0, mode).unwrap().unwrap().value;
            let all = degree_ir_all_line_bases(&g, 7.0, mode).unwrap().unwrap();
            assert_eq!(cot, all, "{g:?}");
        }
    }
}

#[test]
fn relabelling_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for g in corpus(200, 6) {
        let mut vp: Vec<usize> = (0..g.vertex_count()).collect();
        let mut lp: Vec<usize> = (0..g.line_count()).collect();
        vp.shuffle(&mut rng);
        lp.shuffle(&mut rng);
        let flips: Vec<bool> = (0..g.line_count()).map(|_| rng.gen()).collect();
        let r = g.relabelled(&vp, &lp, &flips);
        for d in [3.0, 6.5, 9.0] {
            assert_eq!(deg0(&g, d), deg0(&r, d));
            assert_eq!(
                degree_ir(&g, d, MassMode::AsLabelled).unwrap().unwrap().value,
                degree_ir(&r, d, MassMode::AsLabelled).unwrap().unwrap().value
            );
            assert_eq!(degree_uv(&g, d).unwrap().unwrap().value, degree_uv(&r, d).unwrap().unwrap().value);
        }
        assert_eq!(critical_dimension(&g).unwrap(), critical_dimension(&r).unwrap());
    }
}

fn distinct<R: Rng>(rng: &mut R, n: usize) -> (usize, usize) {
    let a = rng.gen_range(0..n);
    let b = (a + rng.gen_range(1..n)) % n;
    (a, b)
}

fn random_construction<R: Rng>(g: &FeynmanGraph, rng: &mut R) -> Construction {
    let n = g.line_count();
    match if n < 2 { 0 } else { rng.gen_range(0..3) } {
        0 => Construction::C1 { line: rng.gen_range(0..n) },
        1 => {
            let (first, second) = distinct(rng, n);
            Construction::C2 { first, second }
        }
        _ => Construction::C3 { first: distinct(rng, n), second: distinct(rng, n + 3) },
    }
}

#[test]
fn construction_bounds_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds: Vec<Ratio<i64>> = vec![Ratio::from(3), Ratio::new(11, 2), Ratio::from(6), Ratio::new(13, 2), Ratio::from(7), Ratio::from(8)];
    for g in bridgeless_corpus(200, 8) {
        let which = random_construction(&g, &mut rng);
        let out = construct(&g, which).unwrap();
        for &d in &ds {
            // Exact minima: compare affine forms at rational d over every (Γ, H).
            let min_at = |h: &FeynmanGraph| {
                loop_bases(h)
                    .unwrap()
                    .iter()
                    .flat_map(|b| subset_degrees(h, b, MassMode::AllMassless))
                    .map(|(_, ir, _)| ir.at_exact(d))
                    .min()
                    .unwrap()
            };
            let (a, b) = (min_at(&g), min_at(&out));
            let six = Ratio::from(6);
            let floor = match which {
                Construction::C1 { .. } => a - 2,
                Construction::C2 { .. } => a + (d - six).min(Ratio::from(0)),
                Construction::C3 { .. } => a + (d - six).min(Ratio::from(0)) * 2,
            };
            assert!(b >= floor, "{which:?} on {g:?} at d={d}: {b} < {floor}");
            let f = |r: Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
            assert_eq!(construction_bound(which, f(a), f(d)), f(floor));
        }
        if let Construction::C2 { .. } = which {
            let dc = |h: &FeynmanGraph| critical_dimension(h).unwrap().unwrap();
            assert!(dc(&out) <= dc(&g).max(Ratio::from(6)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_are_small_and_connected(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = FeynmanGraph::random(&mut rng, 5, 8, 0.5);
        prop_assert!(g.vertex_count() <= 5 && g.line_count() <= 8);
        prop_assert!(g.loops() >= 1);
        prop_assert!(FeynmanGraph::new(g.vertex_count(), g.lines().to_vec()).is_ok());
    }

    #[test]
    fn critical_dimension_marks_the_sign_change(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = FeynmanGraph::random(&mut rng, 4, 7, 0.0);
        let dc = critical_dimension(&g).unwrap().unwrap();
        let dcf = *dc.numer() as f64 / *dc.denom() as f64;
        prop_assert!(deg0(&g, dcf) == 0.0);
        prop_assert!(deg0(&g, dcf + 0.25) > 0.0);
    }
}
