use std::f64::consts::PI;

use lace_core::diagrams::*;
use lace_core::lattice::{LatticeSpec, TorusIndexer};
use lace_core::mc::two_point_function;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nn(d: usize, s: usize) -> LatticeSpec {
    LatticeSpec::nearest_neighbour(d, s).unwrap()
}

/// Site index of x − y on the torus.
fn difference(idx: &TorusIndexer, s: usize, x: usize, y: usize) -> usize {
    let (a, b) = (idx.coords(x), idx.coords(y));
    let c: Vec<usize> = a.iter().zip(&b).map(|(&i, &j)| (i + s - j) % s).collect();
    idx.index(&c)
}

fn convolve(idx: &TorusIndexer, s: usize, f: &[f64], g: &[f64]) -> Vec<f64> {
    let v = f.len();
    (0..v)
        .map(|x| (0..v).map(|y| f[y] * g[difference(idx, s, x, y)]).sum())
        .collect()
}

/// Random field with f(x) = f(−x), as every two-point function has.
fn random_field(idx: &TorusIndexer, s: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = idx.site_count();
    let raw: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() * 0.1).collect();
    let mut f: Vec<f64> = (0..v).map(|x| raw[x] + raw[difference(idx, s, 0, x)]).collect();
    f[0] = 1.0;
    f
}

fn mc_grid(spec: &LatticeSpec, h: f64) -> PropagatorGrid {
    let tau = two_point_function(spec, 0.2, h, 200, 3, 1).unwrap();
    PropagatorGrid::from_position(spec, h, &tau, PropagatorSource::Measured { samples: 200 }).unwrap()
}

#[test]
fn fft_matches_direct_convolution() {
    let spec = nn(3, 8);
    let idx = TorusIndexer::new(&spec);
    for tau in [random_field(&idx, 8, 1), mc_grid(&spec, 0.0).position()] {
        let grid = PropagatorGrid::from_position(&spec, 0.0, &tau, PropagatorSource::Explicit).unwrap();
        let back = grid.position();
        for (a, b) in back.iter().zip(&tau) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let two = convolve(&idx, 8, &tau, &tau);
        let three = convolve(&idx, 8, &two, &tau);
        let p2 = polygon(&grid, 2).unwrap();
        let p3 = polygon(&grid, 3).unwrap();
        for x in 0..512 {
            let d2 = two[x] - if x == 0 { tau[0].powi(2) } else { 0.0 };
            let d3 = three[x] - if x == 0 { tau[0].powi(3) } else { 0.0 };
            assert!((p2.values[x] - d2).abs() < 1e-10);
            assert!((p3.values[x] - d3).abs() < 1e-10);
        }
        assert!((triangle(&grid) - three[0]).abs() < 1e-10);
        let sup = p3.values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(p3.sup, sup);
    }
}

#[test]
fn weighted_polygon_matches_direct_sum() {
    let spec = nn(3, 8);
    let idx = TorusIndexer::new(&spec);
    let grid = mc_grid(&spec, 0.05);
    let tau = grid.position();
    let weighted: Vec<f64> = (0..512).map(|y| idx.min_image_norm2(0, y) as f64 * tau[y]).collect();
    let direct = convolve(&idx, 8, &weighted, &tau);
    let w = weighted_polygon(&grid, 2).unwrap();
    for (a, b) in w.values.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn delta_propagator() {
    let spec = nn(2, 5);
    for h in [0.0, 0.3] {
        let grid = PropagatorGrid::proxy(&spec, h, 0.0, PROXY_C).unwrap();
        let z = 1.0 / (1.0 + PROXY_C * h.sqrt());
        assert!(grid.values.iter().all(|&v| (v - z).abs() < 1e-15));
        let p2 = polygon(&grid, 2).unwrap();
        assert!(p2.values.iter().all(|v| v.abs() < 1e-14));
        let w = weighted_polygon(&grid, 3).unwrap();
        assert!(w.values.iter().all(|v| v.abs() < 1e-14));
    }
    let tau = {
        let mut t = vec![0.0; 25];
        t[0] = 1.0;
        t
    };
    let grid = PropagatorGrid::from_position(&spec, 0.0, &tau, PropagatorSource::Explicit).unwrap();
    assert!(polygon(&grid, 2).unwrap().values[0].abs() < 1e-14);
    assert!((triangle(&grid) - 1.0).abs() < 1e-14);
}

#[test]
fn square_examples() {
    let spec = nn(3, 4);
    let g = mc_grid(&spec, 0.1);
    let plain = g.values.iter().map(|v| v.powi(4)).sum::<f64>() / 64.0;
    assert!((square_one_massive(&g, &g).unwrap() - plain).abs() < 1e-12 * plain);
    // p = 0: τ̂ ≡ e^{−h} and τ̂₀ ≡ 1.
    let h = 0.4;
    let th = PropagatorGrid::from_momentum(&spec, h, vec![(-h as f64).exp(); 64], PropagatorSource::Explicit).unwrap();
    let t0 = PropagatorGrid::from_momentum(&spec, 0.0, vec![1.0; 64], PropagatorSource::Explicit).unwrap();
    assert!((square_one_massive(&th, &t0).unwrap() - (-h as f64).exp()).abs() < 1e-15);
    let other = PropagatorGrid::from_momentum(&nn(3, 5), 0.0, vec![1.0; 125], PropagatorSource::Explicit).unwrap();
    assert_eq!(square_one_massive(&th, &other), Err(DiagramError::MismatchedGrids));
}

#[test]
fn diagrams_decrease_with_field() {
    let spec = nn(3, 6);
    let g0 = mc_grid(&spec, 0.0);
    let g2 = mc_grid(&spec, 0.2);
    assert!(polygon(&g2, 3).unwrap().sup <= polygon(&g0, 3).unwrap().sup + 1e-12);
    assert!(weighted_polygon(&g2, 2).unwrap().sup <= weighted_polygon(&g0, 2).unwrap().sup + 1e-12);
    // The same samples at larger h give a pointwise smaller τ.
    for (a, b) in g2.position().iter().zip(g0.position()) {
        assert!(*a <= b + 1e-12);
    }
}

#[test]
fn proxy_grid_zero_mode() {
    let spec = nn(3, 4);
    let g = PropagatorGrid::proxy(&spec, 0.0, 1.0, PROXY_C).unwrap();
    assert_eq!(g.values[0], 0.0);
    assert!(g.chi.is_infinite());
    let g = PropagatorGrid::proxy(&spec, 0.01, 1.0, PROXY_C).unwrap();
    assert!((g.chi - 1.0 / (PROXY_C * 0.1)).abs() < 1e-12);
    assert!(PropagatorGrid::proxy(&spec, 0.0, 1.2, PROXY_C).is_err());
}

#[test]
fn proxy_triangle_is_finite_and_close_to_one() {
    // ∇ − 1 starts at 6 D̂² ~ 6/Ω; Ω(∇ − 1) falls towards that constant.
    let mut last = f64::INFINITY;
    for d in [7usize, 8, 10, 14, 20, 40, 60] {
        let t = proxy_triangle(d, 1.0).unwrap();
        assert!(t.is_finite() && t > 1.0);
        let scaled = (t - 1.0) * 2.0 * d as f64;
        assert!(scaled < last);
        last = scaled;
    }
    assert!(last > 6.0 && last < 6.5);
    assert!(proxy_triangle(5, 1.0).unwrap().is_infinite());
    assert_eq!(proxy_triangle(7, 0.0).unwrap(), 1.0);
}

#[test]
fn proxy_triangle_matches_torus_sum() {
    // A large torus at pΩ < 1 converges to the infinite-volume value.
    let p_omega = 0.8;
    let exact = proxy_triangle(3, p_omega).unwrap();
    let grid = PropagatorGrid::proxy(&nn(3, 32), 0.0, p_omega, PROXY_C).unwrap();
    assert!((triangle(&grid) - exact).abs() < 1e-6 * exact);
}

#[test]
fn square_slope_at_seven_dimensions() {
    let hs: Vec<f64> = (0..9).map(|i| 1e-8 * 10f64.powf(i as f64 / 4.0)).collect();
    let s: Vec<f64> = hs.iter().map(|&h| proxy_square(7, PROXY_C, h).unwrap()).collect();
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let (slope, _) = least_squares(&x, &y);
    assert!((slope + 0.25).abs() < 0.05, "{slope}");
    assert!(proxy_square(8, PROXY_C, 0.0).unwrap().is_infinite());
    assert!(proxy_square(10, PROXY_C, 0.0).unwrap().is_finite());
    assert_eq!(proxy_square(6, PROXY_C, 0.1), Err(DiagramError::DimensionTooLow(6)));
}

#[test]
fn square_times_magnetization_vanishes() {
    // With M ∝ √h, S_h M_h / h^{δ(d)} stays bounded as h → 0.
    for d in [7usize, 9] {
        let delta = delta_exponent(d).unwrap();
        let ratios: Vec<f64> = [1e-7, 1e-6, 1e-5, 1e-4]
            .iter()
            .map(|&h| proxy_square(d, PROXY_C, h).unwrap() * h.sqrt() / delta.rate(h))
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 2.0, "d={d}: {ratios:?}");
    }
}

#[test]
fn heat_kernel_at_zero_and_bessel() {
    assert!((heat_kernel_nn(7, 0.0) - 1.0).abs() < 1e-15);
    // e^{−x} I₀(x) at x = 1 and 100.
    assert!((scaled_bessel_i0(1.0) - 0.465_759_607_593_640_6).abs() < 1e-14);
    assert!((scaled_bessel_i0(100.0) - 0.039_944_379_299_096_9).abs() < 1e-12);
}

#[test]
fn reference_integral_examples() {
    for d in [1usize, 3, 7] {
        let v = reference_integral(&IntegralSpec { m: 0.0, n: 0.0, d, h: 0.1 }).unwrap().value().unwrap();
        let exact = (2.0 * PI).powi(d as i32);
        assert!((v - exact).abs() < 1e-9 * exact, "d={d}: {v} vs {exact}");
    }
    let div = |m, n, d, h| reference_integral(&IntegralSpec { m, n, d, h }).unwrap();
    assert_eq!(div(1.0, 3.0, 6, 0.1), IntegralValue::Divergent);
    assert_eq!(div(1.0, 3.0, 8, 0.0), IntegralValue::Divergent);
    assert!(div(1.0, 3.0, 9, 0.0).value().is_some());
    // I_{1,0}^{(1)}(h) = ∫_{−π}^{π} dk/(k² + a), a = √h.
    let a: f64 = 0.3;
    let v = div(1.0, 0.0, 1, a * a).value().unwrap();
    let exact = 2.0 * (PI / a.sqrt()).atan() / a.sqrt();
    assert!((v - exact).abs() < 1e-9 * exact);
    assert!(reference_integral(&IntegralSpec { m: -1.0, n: 0.0, d: 3, h: 0.1 }).is_err());
}

#[test]
fn expected_scalings() {
    assert_eq!(expected_scaling(1.0, 3.0, 6), IntegralScaling::Divergent);
    assert_eq!(expected_scaling(1.0, 3.0, 7), IntegralScaling::Power(-0.25));
    assert_eq!(expected_scaling(1.0, 3.0, 8), IntegralScaling::Log);
    assert_eq!(expected_scaling(1.0, 3.0, 10), IntegralScaling::Constant);
}

#[test]
fn integral_exponent_at_seven_dimensions() {
    let f = fit_exponent(1.0, 3.0, 7, 1e-12, 1e-10, 5).unwrap();
    assert!((f.slope + 0.25).abs() < 0.02, "{}", f.slope);
}

#[test]
fn delta_exponents() {
    assert_eq!(delta_exponent(7).unwrap(), DeltaExponent { power: 0.25, log: false });
    assert_eq!(delta_exponent(8).unwrap(), DeltaExponent { power: 0.5, log: true });
    assert_eq!(delta_exponent(10).unwrap(), DeltaExponent { power: 0.5, log: false });
    assert_eq!(delta_exponent(6), Err(DiagramError::DimensionTooLow(6)));
    assert!((delta_exponent(8).unwrap().rate(1e-4) - 1e-2 * 1e-4f64.ln().abs()).abs() < 1e-15);
}

#[test]
fn finite_size_pairs() {
    let spec = nn(3, 8);
    let pair = finite_size_pair(&spec, |l| Ok(triangle(&PropagatorGrid::proxy(l, 0.0, 0.8, PROXY_C)?))).unwrap();
    assert_eq!(pair.side, 8);
    assert!(pair.error() < 1e-2 * pair.doubled, "{pair:?}");
}
