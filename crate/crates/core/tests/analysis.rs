use lace_core::analysis::*;
use lace_core::lattice::LatticeSpec;
use lace_core::mc::{axis_wave_vectors, measure, SimulationPlan};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

/// Â(k) = 1 − a e^{a²/2} √(π/2) erfc(a/√2), a = k²/2; asymptotic series for large a.
fn ise_closed_form(k: f64) -> f64 {
    let a = 0.5 * k * k;
    if a < 8.0 {
        1.0 - a * (0.5 * a * a).exp() * (std::f64::consts::PI / 2.0).sqrt() * erfc(a / 2f64.sqrt())
    } else {
        // Σ (−1)^j (2j+1)!! / a^{2j+2}
        let mut term = 1.0 / (a * a);
        let mut sum = term;
        for j in 1..12 {
            term *= -((2 * j + 1) as f64) / (a * a);
            sum += term;
        }
        sum
    }
}

#[test]
fn ise_at_zero_is_one() {
    assert!((ise_two_point(0.0).unwrap() - 1.0).abs() < 1e-12);
}

// Closed form evaluated at 30 digits, frozen.
const ISE_TABLE: [(f64, f64); 13] = [
    (0.0, 1.0),
    (0.5, 0.85781363484954944),
    (1.0, 0.56181777177315383),
    (1.5, 0.30817607933020405),
    (2.0, 0.15726154142389105),
    (2.5, 0.080752196749095886),
    (3.0, 0.043432388010856944),
    (3.5, 0.024765005389749689),
    (4.0, 0.01494429393654163),
    (4.5, 0.0094822007478491053),
    (5.0, 0.0062808854860348461),
    (5.5, 0.0043151776967087833),
    (6.0, 0.0030582735381867796),
];

#[test]
fn ise_matches_frozen_closed_form() {
    for (k, c) in ISE_TABLE {
        let q = ise_two_point(k).unwrap();
        assert!((q - c).abs() <= 1e-10 * c, "k={k}: {q} vs {c}");
    }
}

#[test]
fn ise_matches_erfc_form() {
    // The double-precision erfc is good to about 1e-10 here.
    for i in 0..=60 {
        let k = 0.1 * i as f64;
        let q = ise_two_point(k).unwrap();
        let c = ise_closed_form(k);
        assert!((q - c).abs() <= 1e-8 * c, "k={k}: {q} vs {c}");
    }
}

#[test]
fn ise_large_k_decay() {
    // k⁴ Â(k) from 30-digit quadrature, frozen.
    for (k, expect) in [(10.0, 3.995_209_573_216), (30.0, 3.999_940_742_204), (100.0, 3.999_999_520_000)] {
        let v = ise_two_point(k).unwrap();
        assert!((v - ise_closed_form(k)).abs() <= 1e-10 * v);
        assert!((v - expect / k.powi(4)).abs() <= 1e-10 * v);
        assert!((k.powi(4) * v - expect).abs() < 1e-8, "k={k}: {}", k.powi(4) * v);
        assert!(k * k * v < 0.05);
    }
}

#[test]
fn ise_curve_decreasing() {
    let ks: Vec<f64> = (0..200).map(|i| 0.05 * i as f64).collect();
    let c = ise_curve(&ks).unwrap();
    assert_eq!(c.values[0], ise_two_point(0.0).unwrap());
    assert!(c.values.windows(2).all(|w| w[1] < w[0]));
}

fn h_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

#[test]
fn magnetization_exact_power_law() {
    let h = h_grid(1e-4, 1e-1, 12);
    let m = h.iter().map(|x| 3.0 * x.sqrt()).collect();
    let fit = fit_magnetization(&Series::exact(h, m), FitWindow::new(1e-4, 1e-1), Bootstrap::default()).unwrap();
    assert!((fit.get("inverse_delta").unwrap() - 0.5).abs() < 1e-3);
    assert!((fit.get("amplitude").unwrap() - 3.0).abs() < 1e-9);
    assert_eq!(fit.window, FitWindow::new(1e-4, 1e-1));
    assert_eq!(fit.points, 12);
    assert!(fit.errors.iter().all(|e| e.is_nan()));
}

#[test]
fn magnetization_correction_drifts_to_half() {
    let h = h_grid(1e-6, 1.0, 61);
    let m = h.iter().map(|x| x.sqrt() * (1.0 + x)).collect();
    let s = Series::exact(h, m);
    let mut last = f64::INFINITY;
    for hi in [1.0, 1e-1, 1e-2, 1e-3] {
        let lo = hi * 1e-3;
        let e = fit_magnetization(&s, FitWindow::new(lo, hi), Bootstrap::default()).unwrap().parameters[0];
        let gap = (e - 0.5).abs();
        assert!(gap < last, "window top {hi}: {e}");
        last = gap;
    }
    assert!(last < 1e-3);
}

#[test]
fn magnetization_rejects_short_span() {
    let h = h_grid(1e-3, 1e-2, 10);
    let m = h.iter().map(|x| x.sqrt()).collect();
    assert!(matches!(
        fit_magnetization(&Series::exact(h.clone(), m), FitWindow::new(1e-3, 1e-2), Bootstrap::default()),
        Err(AnalysisError::Insufficient(_))
    ));
    let h4 = h_grid(1e-4, 1e-1, 4);
    let m4 = h4.iter().map(|x| x.sqrt()).collect();
    assert!(fit_magnetization(&Series::exact(h4, m4), FitWindow::new(1e-4, 1e-1), Bootstrap::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn magnetization_fit_scale_equivariant(
        exponent in 0.2f64..0.8,
        noise in proptest::collection::vec(-0.05f64..0.05, 8),
        power in -20i32..20,
        lambda in 1e-3f64..1e3,
    ) {
        let h = h_grid(1e-4, 1e-1, 8);
        let m: Vec<f64> = h.iter().zip(&noise).map(|(x, e)| x.powf(exponent) * (1.0 + e)).collect();
        let err: Vec<f64> = m.iter().map(|v| 0.01 * v).collect();
        let w = FitWindow::new(1e-4, 1e-1);
        let base = Series { x: h.clone(), y: m.clone(), y_err: err.clone(), batches: vec![], batch_counts: vec![] };
        let f0 = fit_magnetization(&base, w, Bootstrap::default()).unwrap();
        let s = 2f64.powi(power);
        let scaled = Series { x: h.clone(), y: m.iter().map(|v| v * s).collect(), y_err: err.iter().map(|v| v * s).collect(), batches: vec![], batch_counts: vec![] };
        let f1 = fit_magnetization(&scaled, w, Bootstrap::default()).unwrap();
        prop_assert_eq!(f0.parameters[0], f1.parameters[0]);
        prop_assert_eq!(f0.parameters[1] * s, f1.parameters[1]);
        let general = Series { x: h, y: m.iter().map(|v| v * lambda).collect(), y_err: err.iter().map(|v| v * lambda).collect(), batches: vec![], batch_counts: vec![] };
        let f2 = fit_magnetization(&general, w, Bootstrap::default()).unwrap();
        prop_assert!((f0.parameters[0] - f2.parameters[0]).abs() < 1e-12);
    }

    #[test]
    fn tau_surface_self_consistent(c in 0.2f64..5.0, d2 in 0.2f64..5.0) {
        let (q, h, tau) = surface_from(c, d2, |_, _| 0.0);
        let fit = fit_tau_surface(&SurfaceData::exact(q, h, tau), FitWindow::new(0.0, 1.0), 10.0, Bootstrap::default()).unwrap();
        prop_assert!((fit.fit.parameters[0] / c - 1.0).abs() < 1e-6);
        prop_assert!((fit.fit.parameters[1] / d2 - 1.0).abs() < 1e-6);
    }
}

fn surface_from(c: f64, d2: f64, eps: impl Fn(f64, f64) -> f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let q: Vec<f64> = (0..6).map(|i| 0.02 * i as f64).collect();
    let h = h_grid(1e-4, 1e-1, 8);
    let mut tau = Vec::new();
    for &hh in &h {
        for &qq in &q {
            tau.push(c / (d2 * qq + FIELD_COEFFICIENT * hh.sqrt()) * (1.0 + eps(qq, hh)));
        }
    }
    (q, h, tau)
}

#[test]
fn tau_surface_singular_design() {
    let h = h_grid(1e-3, 1e-1, 5);
    let tau = h.iter().map(|x| 1.0 / x.sqrt()).collect();
    let data = SurfaceData::exact(vec![0.0], h, tau);
    assert_eq!(fit_tau_surface(&data, FitWindow::new(0.0, 1.0), 1.0, Bootstrap::default()).unwrap_err(), AnalysisError::Singular);
}

#[test]
fn residual_trend_detects_shrinking_corrections() {
    let (q, h, tau) = surface_from(1.3, 0.8, |q, h| 0.2 * (q + h.sqrt()));
    let fit = fit_tau_surface(&SurfaceData::exact(q, h, tau), FitWindow::new(0.0, 1.0), 10.0, Bootstrap::default()).unwrap();
    let t = residual_trend(&fit);
    assert!(t.decreasing && t.spearman > 0.0, "{t:?}");
    let (q, h, tau) = surface_from(1.3, 0.8, |q, h| 0.2 / (1.0 + 50.0 * (q + h.sqrt())));
    let fit = fit_tau_surface(&SurfaceData::exact(q, h, tau), FitWindow::new(0.0, 1.0), 10.0, Bootstrap::default()).unwrap();
    assert!(!residual_trend(&fit).decreasing);
}

#[test]
fn envelope_holds_for_exact_form() {
    let (q, h, tau) = surface_from(1.0, 1.0, |_, _| 0.0);
    let data = SurfaceData::exact(q, h, tau);
    let e = envelope_check(&data, FitWindow::new(0.0, 1.0), 10.0).unwrap();
    assert!(e.k1 > 0.0 && e.k1 < e.k2, "{e:?}");
    assert!(e.validated > 0);
}

#[test]
fn power_sum_matches_direct() {
    for (a, b) in [(1u64, 1u64), (3, 70), (16, 5000), (64, 127), (1024, 2047), (4096, 1 << 20)] {
        for tau in [0.7, 1.0, 1.5, 2.3] {
            let direct: f64 = (a..=b).map(|n| (n as f64).powf(-tau)).sum();
            let v = power_sum(a, b, tau);
            assert!((v / direct - 1.0).abs() < 1e-11, "{a}..{b} tau={tau}: {v} vs {direct}");
        }
    }
}

fn log_bins(max_n: u64) -> (Vec<u64>, Vec<u64>) {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut j = 0;
    while (1u64 << j) <= max_n {
        lo.push(1 << j);
        hi.push(((1u64 << (j + 1)) - 1).min(max_n));
        j += 1;
    }
    (lo, hi)
}

#[test]
fn tail_from_sampled_power_law() {
    // Inverse-CDF draws from P(n) ∝ n^{-3/2}, n ≤ 2^17.
    let nmax = 1u64 << 17;
    let mut cdf = Vec::with_capacity(nmax as usize);
    let mut acc = 0.0;
    for n in 1..=nmax {
        acc += (n as f64).powf(-1.5);
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 2_000_000;
    let (lo, hi) = log_bins(nmax);
    let mut counts = vec![0u64; lo.len()];
    for _ in 0..draws {
        let u = rng.gen::<f64>() * acc;
        let n = cdf.partition_point(|&c| c < u) as u64 + 1;
        counts[(63 - n.leading_zeros()) as usize] += 1;
    }
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let err: Vec<f64> = counts.iter().map(|&c| (c.max(1) as f64).sqrt() / draws as f64).collect();
    let mut data = TailData::exact(lo, hi, mass);
    data.mass.y_err = err;
    let fit = fit_cluster_tail(&data, FitWindow::new(4.0, 16383.0), Bootstrap::default()).unwrap();
    assert!((fit.parameters[0] - 1.5).abs() < 0.02, "{}", fit.parameters[0]);
}

#[test]
fn tail_window_excludes_cutoff() {
    let nmax = 1u64 << 18;
    let (lo, hi) = log_bins(nmax);
    let mass: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(&a, &b)| (a..=b).map(|n| (n as f64).powf(-1.5) * (-(n as f64) / 5000.0).exp()).sum())
        .collect();
    let data = TailData::exact(lo, hi, mass);
    let inside = fit_cluster_tail(&data, FitWindow::new(8.0, 511.0), Bootstrap::default()).unwrap();
    assert!((inside.parameters[0] - 1.5).abs() < 0.05, "{}", inside.parameters[0]);
    let all = fit_cluster_tail(&data, FitWindow::new(1.0, nmax as f64), Bootstrap::default()).unwrap();
    assert!((all.parameters[0] - 1.5).abs() > 0.05);
}

#[test]
fn tail_needs_three_decades() {
    let (lo, hi) = log_bins(512);
    let mass = lo.iter().map(|&n| (n as f64).powf(-0.5)).collect();
    assert!(matches!(
        fit_cluster_tail(&TailData::exact(lo, hi, mass), FitWindow::new(1.0, 512.0), Bootstrap::default()),
        Err(AnalysisError::Insufficient(_))
    ));
}

fn small_table(seed: u64) -> lace_core::mc::ObservableTable {
    let lattice = LatticeSpec::nearest_neighbour(2, 8).unwrap();
    measure(&SimulationPlan {
        lattice,
        p: 0.45,
        h_grid: h_grid(1e-3, 0.3, 6),
        k_list: axis_wave_vectors(&lattice, 3),
        samples: 400,
        seed,
        workers: 2,
        batches: 20,
    })
    .unwrap()
}

#[test]
fn bootstrap_is_reproducible_and_worker_independent() {
    let table = small_table(5);
    let s = Series::magnetization(&table);
    let w = FitWindow::new(1e-3, 0.3);
    let a = fit_magnetization(&s, w, Bootstrap { replicas: 50, seed: 9 }).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| fit_magnetization(&s, w, Bootstrap { replicas: 50, seed: 9 }).unwrap());
    assert_eq!(a, b);
    assert!(a.errors.iter().all(|e| e.is_finite() && *e > 0.0));
}

#[test]
fn sandwich_and_chi_rows() {
    let table = small_table(6);
    let rows = magnetization_sandwich(&table, 0.45, 4, 3.0);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r.lower <= r.upper);
        assert!(r.inside, "{r:?}");
    }
    let chi = chi_amplitude(&table, 2.0);
    assert!(chi.iter().all(|&(h, v, t)| h > 0.0 && v > 0.0 && (t - 2.0 / FIELD_COEFFICIENT).abs() < 1e-15));
}

#[test]
fn surface_from_table_layout() {
    let table = small_table(7);
    let lattice = LatticeSpec::nearest_neighbour(2, 8).unwrap();
    let data = SurfaceData::from_table(&lattice, &table);
    assert_eq!(data.q.len(), 3);
    assert_eq!(data.q[0], 0.0);
    assert_eq!(data.tau.y.len(), 18);
    assert_eq!(data.tau.y[4], table.tau[1][1].mean);
    assert_eq!(data.tau.batches[0].len(), 18);
    let tail = TailData::from_table(&table);
    assert_eq!(tail.n_low.len(), table.histogram.len());
    let total: f64 = tail.mass.y.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn eta_recovered_from_exact_shape() {
    let q = vec![0.0, 0.1, 0.3, 0.7, 1.5];
    for eta in [0.0, 0.2, -0.1] {
        let h = vec![0.0, 0.01];
        let tau: Vec<f64> = h
            .iter()
            .flat_map(|&h: &f64| q.iter().map(move |&q: &f64| 1.0 / (2.0 * q.powf(1.0 - eta / 2.0) + 3.0 * h.sqrt() + 0.05)))
            .collect();
        let data = SurfaceData::exact(q.clone(), h, tau);
        for row in 0..2 {
            let fit = fit_eta(&data, row, 1.0, Bootstrap::default()).unwrap();
            assert!((fit.get("eta").unwrap() - eta).abs() < 1e-12, "{fit:?}");
            assert_eq!(fit.points, 3);
        }
    }
    let flat = SurfaceData::exact(vec![0.1, 0.2], vec![0.0], vec![1.0, 0.5]);
    assert!(fit_eta(&flat, 0, 1.0, Bootstrap::default()).is_err());
}
