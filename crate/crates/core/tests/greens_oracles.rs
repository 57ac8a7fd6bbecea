use std::f64::consts::PI;

use iscat_core::forward::bessel::hankel1_0;
use iscat_core::forward::{GreensOperators, ScatteringScene};
use iscat_core::grid::make_grid;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ops(nx: usize, ny: usize) -> GreensOperators {
    let lambda0 = 0.075;
    let grid = make_grid(nx, ny, 2.0 * lambda0 * nx as f64 / 16.0, 2.0 * lambda0 * ny as f64 / 16.0, lambda0).unwrap();
    let scene = ScatteringScene::circular(grid, 8, 8, 4.0 * lambda0).unwrap();
    GreensOperators::build(&scene).unwrap()
}

fn i_over_4() -> Complex64 {
    Complex64::new(0.0, 0.25)
}

/// `k0² ∫_disk(a) (i/4) H0(k0 ρ) dA` by the trapezoid rule on a quadratically graded mesh.
fn self_integral(k0: f64, a: f64, m: usize) -> Complex64 {
    // ρ = a t² clusters nodes near the logarithmic singularity.
    let h = 1.0 / m as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    for i in 1..=m {
        let t = i as f64 * h;
        let rho = a * t * t;
        let w = if i == m { 0.5 } else { 1.0 };
        sum += hankel1_0(k0 * rho) * rho * (2.0 * a * t) * w;
    }
    i_over_4() * k0 * k0 * 2.0 * PI * sum * h
}

/// `k0² ∫_disk(a, centered at d) (i/4) H0(k0 |r|) dA` by a polar tensor rule.
fn coupling_integral(k0: f64, a: f64, d: f64, n_r: usize, n_t: usize) -> Complex64 {
    // Midpoint rule about the disk center; the integrand is smooth for d > a.
    let mut sum = Complex64::new(0.0, 0.0);
    for i in 0..n_r {
        let r = a * (i as f64 + 0.5) / n_r as f64;
        for j in 0..n_t {
            let t = 2.0 * PI * (j as f64 + 0.5) / n_t as f64;
            let dist = (d * d + r * r + 2.0 * d * r * t.cos()).sqrt();
            sum += hankel1_0(k0 * dist) * r;
        }
    }
    i_over_4() * k0 * k0 * sum * (a / n_r as f64) * (2.0 * PI / n_t as f64)
}

#[test]
fn self_term_matches_quadrature() {
    let g = ops(16, 16);
    let want = self_integral(g.k0(), g.equivalent_radius(), 256);
    let got = g.self_term();
    assert!((got - want).norm() / want.norm() < 5e-3, "{got} vs {want}");
    assert_eq!(g.gd_entry(5, 5), got);
}

#[test]
fn self_term_quadrature_converges() {
    let g = ops(16, 16);
    let fine = self_integral(g.k0(), g.equivalent_radius(), 4096);
    assert!((g.self_term() - fine).norm() / fine.norm() < 1e-5);
}

#[test]
fn coupling_matches_disk_integral() {
    let g = ops(16, 16);
    let grid = *g.grid();
    let a = g.equivalent_radius();
    for (m, n) in [(0usize, 1usize), (0, 17), (3, 200)] {
        let (my, mx) = (m / grid.nx, m % grid.nx);
        let (ny, nx) = (n / grid.nx, n % grid.nx);
        let d = ((mx as f64 - nx as f64) * grid.dx()).hypot((my as f64 - ny as f64) * grid.dy());
        let want = coupling_integral(g.k0(), a, d, 200, 400);
        let got = g.gd_entry(m, n);
        assert!((got - want).norm() / want.norm() < 1e-5, "({m},{n}) {got} vs {want}");
    }
}

#[test]
fn operator_is_symmetric() {
    let g = ops(6, 5);
    let d = g.dense_gd();
    for m in 0..d.nrows() {
        for n in 0..d.ncols() {
            assert_eq!(d[[m, n]], d[[n, m]]);
        }
    }
}

fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn fft_application_matches_dense_on_rectangular_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (nx, ny) in [(16, 16), (12, 7), (5, 9)] {
        let g = ops(nx, ny);
        let d = g.dense_gd();
        for _ in 0..5 {
            let x: Vec<Complex64> = (0..nx * ny)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let dense: Vec<Complex64> = d.rows().into_iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            let dense_h: Vec<Complex64> = d
                .columns()
                .into_iter()
                .map(|c| c.iter().zip(&x).map(|(a, b)| a.conj() * b).sum())
                .collect();
            assert!(rel_diff(&g.apply_gd(&x), &dense) <= 1e-10);
            assert!(rel_diff(&g.apply_gd_adjoint(&x), &dense_h) <= 1e-10);
        }
    }
}
