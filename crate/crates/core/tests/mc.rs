use lace_core::events::FiniteGraph;
use lace_core::lattice::{LatticeSpec, TorusIndexer, WaveVector};
use lace_core::mc::*;
use lace_core::oracle::*;
use proptest::prelude::*;

fn nn(d: usize, s: usize) -> LatticeSpec {
    LatticeSpec::nearest_neighbour(d, s).unwrap()
}

fn plan(lattice: LatticeSpec, p: f64, h_grid: Vec<f64>, samples: usize, seed: u64) -> SimulationPlan {
    let k_list = axis_wave_vectors(&lattice, 2);
    SimulationPlan {
        lattice,
        p,
        h_grid,
        k_list,
        samples,
        seed,
        workers: 1,
        batches: 20,
    }
}

fn graph(spec: &LatticeSpec) -> FiniteGraph {
    TorusIndexer::new(spec).finite_graph().unwrap()
}

/// Oracle τ̂(k) = Σ_x τ(0, x) cos(k·x).
fn oracle_tau_hat(spec: &LatticeSpec, p: f64, h: f64, k: &WaveVector) -> f64 {
    let g = graph(spec);
    let idx = TorusIndexer::new(spec);
    let tau = two_point_all(&EnumerationSpec::new(g, p, h, GreenMode::Analytic), 0).unwrap();
    tau.iter()
        .enumerate()
        .map(|(x, t)| {
            let phase: f64 = idx
                .coords(x)
                .iter()
                .zip(k.components())
                .map(|(&c, &kc)| c as f64 * kc)
                .sum();
            t * phase.cos()
        })
        .sum()
}

#[test]
fn extreme_probabilities() {
    let spec = nn(2, 4);
    let ks = axis_wave_vectors(&spec, 3);
    let mut rng = sample_rng(1, 0);
    let c = sample_clusters(&spec, &ks, 0.0, &mut rng);
    assert_eq!(c.sizes.len(), 16);
    assert!(c.sizes.iter().all(|&s| s == 1));
    let c = sample_clusters(&spec, &ks, 1.0, &mut rng);
    assert_eq!(c.sizes, vec![16]);
    assert!(c.labels.iter().all(|&l| l == 0));
    assert!((c.fourier[0][0].re - 16.0).abs() < 1e-12);
    assert!(c.fourier[0][1].norm() < 1e-12);
}

#[test]
fn partition_and_fourier_sums() {
    let spec = nn(3, 4);
    let ks = axis_wave_vectors(&spec, 4);
    let idx = TorusIndexer::new(&spec);
    for i in 0..20 {
        let mut rng = sample_rng(9, i);
        let c = sample_clusters(&spec, &ks, 0.3, &mut rng);
        assert_eq!(c.sizes.iter().map(|&s| s as usize).sum::<usize>(), 64);
        let mut counted = vec![0u32; c.sizes.len()];
        let mut direct = vec![vec![num_complex::Complex64::new(0.0, 0.0); ks.len()]; c.sizes.len()];
        for (x, &l) in c.labels.iter().enumerate() {
            counted[l as usize] += 1;
            let coords = idx.coords(x);
            for (j, k) in ks.iter().enumerate() {
                let phase: f64 = coords.iter().zip(k.components()).map(|(&a, &b)| a as f64 * b).sum();
                direct[l as usize][j] += num_complex::Complex64::from_polar(1.0, phase);
            }
        }
        assert_eq!(counted, c.sizes);
        for (a, b) in c.fourier.iter().flatten().zip(direct.iter().flatten()) {
            assert!((a - b).norm() < 1e-9);
        }
        // k = 0 sums are the sizes.
        for (f, &s) in c.fourier.iter().zip(&c.sizes) {
            assert!((f[0].re - s as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn bonds_join_only_neighbours() {
    let spec = nn(2, 5);
    let idx = TorusIndexer::new(&spec);
    let g = graph(&spec);
    let mut rng = sample_rng(3, 0);
    let c = sample_clusters(&spec, &[], 0.4, &mut rng);
    // Each cluster of size n must be connected through torus bonds.
    for l in 0..c.sizes.len() as u32 {
        let sites: Vec<usize> = (0..25).filter(|&x| c.labels[x] == l).collect();
        let mask = sites.iter().fold(0u64, |m, &x| m | (1 << x));
        let inside = g.bonds_inside(mask);
        let occ = lace_core::events::Occupied::new(&g, inside);
        assert_eq!(occ.cluster(sites[0]), mask);
    }
    assert_eq!(idx.site_count(), 25);
}

#[test]
fn cluster_count_on_four_cycle() {
    let spec = nn(1, 4);
    let p = 0.5;
    let t = measure(&SimulationPlan { batches: 50, ..plan(spec.clone(), p, vec![0.0], 40_000, 11) }).unwrap();
    let g = FiniteGraph::cycle(4);
    let census = cluster_size_census(&g, 0).unwrap();
    let table = EnumerationSpec::new(g, p, 0.0, GreenMode::Analytic).table();
    let inv = census.evaluate_with(&table, |c| 1.0 / c.clear() as f64);
    let exact = 4.0 * inv;
    // Clusters number 4 − k for k < 4 occupied bonds and 1 for k = 4.
    assert!((exact - 33.0 / 16.0).abs() < 1e-12);
    let e = t.cluster_count;
    assert!((e.mean - exact).abs() < 3.0 * e.stderr, "{} vs {exact} ± {}", e.mean, e.stderr);
}

#[test]
fn zero_probability_is_exact() {
    let spec = nn(3, 4);
    let h = vec![0.0, 0.1, 1.0];
    let t = measure(&plan(spec, 0.0, h.clone(), 50, 2)).unwrap();
    for (j, &hh) in h.iter().enumerate() {
        assert!((t.magnetization[j].mean - (1.0 - (-hh).exp())).abs() < 1e-14);
        assert!((t.susceptibility[j].mean - (-hh).exp()).abs() < 1e-14);
        for k in &t.tau[j] {
            assert!((k.mean - (-hh).exp()).abs() < 1e-14);
        }
    }
    assert!((t.cluster_count.mean - 64.0).abs() < 1e-12);
    assert_eq!(t.histogram[0].count, 64 * 50);
}

#[test]
fn zero_momentum_equals_susceptibility() {
    let spec = nn(2, 6);
    let t = measure(&plan(spec, 0.45, vec![0.0, 0.05, 0.3], 400, 5)).unwrap();
    for j in 0..3 {
        let a = t.tau[j][0].mean;
        let b = t.susceptibility[j].mean;
        assert!((a - b).abs() < 1e-12 * b, "{a} vs {b}");
    }
}

#[test]
fn magnetization_matches_oracle() {
    let spec = nn(2, 3);
    let g = graph(&spec);
    let (p, h) = (0.4, 0.1);
    let t = measure(&SimulationPlan { batches: 40, ..plan(spec.clone(), p, vec![h], 40_000, 21) }).unwrap();
    let exact = magnetization_susceptibility(&EnumerationSpec::new(g, p, h, GreenMode::Analytic), 0).unwrap();
    let m = t.magnetization[0];
    assert!((m.mean - exact.magnetization).abs() < 3.0 * m.stderr, "{} vs {}", m.mean, exact.magnetization);
    let chi = t.susceptibility[0];
    assert!((chi.mean - exact.susceptibility).abs() < 3.0 * chi.stderr);
    let k1 = &t.k_list[1];
    let tau1 = t.tau[0][1];
    let o = oracle_tau_hat(&spec, p, h, k1);
    assert!((tau1.mean - o).abs() < 3.0 * tau1.stderr, "{} vs {o}", tau1.mean);
}

#[test]
fn two_point_matches_oracle() {
    let spec = nn(2, 3);
    let g = graph(&spec);
    let (p, h) = (0.35, 0.2);
    let n = 20_000;
    let mc = two_point_function(&spec, p, h, n, 4, 1).unwrap();
    let exact = two_point_all(&EnumerationSpec::new(g, p, h, GreenMode::Analytic), 0).unwrap();
    for (x, (a, b)) in mc.iter().zip(&exact).enumerate() {
        // Per-sample average over 9 translates; a binomial bound is conservative.
        let se = (b * (1.0 - b) / n as f64).sqrt();
        assert!((a - b).abs() < 4.0 * se + 1e-12, "x={x}: {a} vs {b}");
    }
    assert!(two_point_function(&nn(3, 20), p, h, 1, 0, 1).is_err());
}

#[test]
fn sandwich_and_positivity() {
    let h = vec![0.0, 0.01, 0.05, 0.2, 1.0];
    for p in [0.05, 0.15, 0.3] {
        let t = measure(&plan(nn(3, 5), p, h.clone(), 300, 8)).unwrap();
        for (j, &hh) in h.iter().enumerate() {
            let m = t.magnetization[j];
            let upper = (-hh).exp();
            let lower = upper * (1.0 - p).powi(6);
            assert!(1.0 - m.mean <= upper + 3.0 * m.stderr + 1e-15);
            assert!(1.0 - m.mean >= lower - 3.0 * m.stderr - 1e-15);
            assert!((0.0..=1.0).contains(&m.mean));
            assert!(t.susceptibility[j].mean >= 0.0);
            for k in &t.tau[j] {
                assert!(k.mean >= 0.0);
            }
            assert!(t.tau_imag[j].iter().all(|e| e.mean == 0.0));
        }
    }
}

#[test]
fn coupled_monotone_in_h() {
    let spec = nn(2, 8);
    let h: Vec<f64> = (0..12).map(|i| 0.002 * 1.8f64.powi(i)).collect();
    let t = measure(&plan(spec, 0.5, h, 200, 13)).unwrap();
    for w in t.magnetization.windows(2) {
        assert!(w[0].mean <= w[1].mean);
    }
    for w in t.susceptibility.windows(2) {
        assert!(w[0].mean >= w[1].mean);
    }
}

#[test]
fn workers_do_not_change_results() {
    let spec = nn(3, 6);
    let base = plan(spec, 0.2, vec![0.0, 0.01, 0.1], 500, 77);
    let one = measure(&base).unwrap();
    for w in [2, 4] {
        let other = measure(&SimulationPlan { workers: w, ..base.clone() }).unwrap();
        assert_eq!(one, other);
    }
    let tp1 = two_point_function(&nn(2, 6), 0.4, 0.05, 300, 5, 1).unwrap();
    let tp3 = two_point_function(&nn(2, 6), 0.4, 0.05, 300, 5, 3).unwrap();
    assert_eq!(tp1, tp3);
}

#[test]
fn invalid_plans() {
    let good = plan(nn(2, 4), 0.3, vec![0.0, 0.1], 10, 0);
    assert!(measure(&SimulationPlan { samples: 0, ..good.clone() }).is_err());
    assert!(measure(&SimulationPlan { p: 1.5, ..good.clone() }).is_err());
    assert!(measure(&SimulationPlan { h_grid: vec![0.1, 0.0], ..good.clone() }).is_err());
    assert!(measure(&SimulationPlan { h_grid: vec![-0.1], ..good.clone() }).is_err());
    assert!(measure(&SimulationPlan { batches: 0, ..good.clone() }).is_err());
    assert!(measure(&SimulationPlan { k_list: vec![WaveVector::zero(3)], ..good.clone() }).is_err());
}

#[test]
fn histogram_counts_sites() {
    let spec = nn(2, 6);
    let t = measure(&plan(spec, 0.4, vec![0.0], 100, 6)).unwrap();
    let total: u64 = t.histogram.iter().map(|b| b.count).sum();
    assert_eq!(total, 36 * 100);
    let probs = t.bin_probabilities();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(t.histogram[0].n_low, 1);
    assert_eq!(t.histogram.last().unwrap().n_high, 36);
}

#[test]
fn pc_rejects_one_dimension() {
    let cfg = PcConfig { sizes: vec![8], samples: 10, seed: 0, tolerance: 1e-4, max_iterations: 50, workers: 1 };
    assert_eq!(estimate_pc(1, &cfg), Err(McError::NoTransition(1)));
}

#[test]
fn pc_square_lattice() {
    let cfg = PcConfig { sizes: vec![32, 64], samples: 400, seed: 1, tolerance: 1e-6, max_iterations: 100, workers: 1 };
    let est = estimate_pc(2, &cfg).unwrap();
    assert!((est.p_c - 0.5).abs() < 0.02, "{est:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sample_invariants(seed in 0u64..1000, p in 0.0f64..1.0, s in 3usize..7) {
        let spec = nn(2, s);
        let ks = axis_wave_vectors(&spec, 2);
        let mut rng = sample_rng(seed, 0);
        let c = sample_clusters(&spec, &ks, p, &mut rng);
        prop_assert_eq!(c.sizes.iter().map(|&x| x as usize).sum::<usize>(), s * s);
        for (l, &x) in c.labels.iter().enumerate() {
            prop_assert!((x as usize) < c.sizes.len());
            // Labels are numbered by first site.
            if l == 0 { prop_assert_eq!(x, 0); }
        }
        for (f, &n) in c.fourier.iter().zip(&c.sizes) {
            prop_assert!(f[1].norm() <= n as f64 + 1e-9);
        }
    }
}
