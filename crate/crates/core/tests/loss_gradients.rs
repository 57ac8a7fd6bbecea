use iscat_core::forward::{incident_field, simulate, GreensOperators, ScatteringScene, SolverBackend};
use iscat_core::grid::{disk_phantom, make_grid, ContrastMap};
use iscat_core::loss::{
    batch_beta, batch_loss, evaluate, loss_contrast, loss_current, loss_field, loss_field_dense, LossEval, LossKind, TrainingSample,
};
use iscat_core::Error;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMBDA0: f64 = 0.075;

struct Fixture {
    ops: GreensOperators,
    sample: TrainingSample,
}

fn fixture(n: usize, eps: f64, seed: u64) -> Fixture {
    let grid = make_grid(n, n, 2.0 * LAMBDA0, 2.0 * LAMBDA0, LAMBDA0).unwrap();
    let scene = ScatteringScene::circular(grid, 6, 6, 4.0 * LAMBDA0).unwrap();
    let ops = GreensOperators::build(&scene).unwrap();
    let einc = incident_field(&scene).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = [rng.random_range(-0.3..0.3) * LAMBDA0, rng.random_range(-0.3..0.3) * LAMBDA0];
    let chi = disk_phantom(eps, 0.5 * LAMBDA0, center, &grid).unwrap();
    let sim = simulate(&ops, &einc, &chi, SolverBackend::DenseLu).unwrap();
    let sample = TrainingSample {
        chi_true: chi.clone(),
        chi_bp: chi,
        j_true: sim.current,
        etot_true: sim.total,
        esca_doi: sim.scattered_doi,
        scene_ref: format!("fixture-{seed}"),
    };
    Fixture { ops, sample }
}

fn perturbed(chi: &ContrastMap, seed: u64, amp: f64) -> ContrastMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = chi.clone();
    out.chi.mapv_inplace(|c| c + Complex64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp)));
    out
}

/// Worst relative mismatch between analytic and central-difference derivatives over random probes.
fn fd_check(f: impl Fn(&ContrastMap) -> LossEval, at: &ContrastMap, probes: usize, seed: u64) -> f64 {
    let base = f(at);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ny, nx) = at.chi.dim();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let idx = [rng.random_range(0..ny), rng.random_range(0..nx)];
        for (dir, grad) in [(Complex64::new(h, 0.0), &base.grad_re), (Complex64::new(0.0, h), &base.grad_im)] {
            let mut p = at.clone();
            p.chi[idx] += dir;
            let mut m = at.clone();
            m.chi[idx] -= dir;
            let fd = (f(&p).value - f(&m).value) / (2.0 * h);
            let a = grad[idx];
            let scale = a.abs().max(fd.abs()).max(1e-8 * base.value.abs().max(1.0));
            worst = worst.max((a - fd).abs() / scale);
        }
    }
    worst
}

#[test]
fn contrast_gradient_matches_finite_differences() {
    let fx = fixture(8, 2.0, 1);
    let hat = perturbed(&fx.sample.chi_true, 2, 0.4);
    let err = fd_check(|m| loss_contrast(m, &fx.sample.chi_true).unwrap(), &hat, 20, 3);
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn current_gradient_matches_finite_differences() {
    let fx = fixture(8, 2.5, 4);
    let beta = batch_beta(LossKind::Current, &[&fx.sample]).unwrap();
    let hat = perturbed(&fx.sample.chi_true, 5, 0.4);
    let err = fd_check(|m| loss_current(m, &fx.sample, beta).unwrap(), &hat, 20, 6);
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn field_gradient_matches_finite_differences() {
    let fx = fixture(8, 2.5, 7);
    let beta = batch_beta(LossKind::Field, &[&fx.sample]).unwrap();
    let hat = perturbed(&fx.sample.chi_true, 8, 0.4);
    let err = fd_check(|m| loss_field(m, &fx.sample, &fx.ops, beta).unwrap(), &hat, 20, 9);
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn fft_and_dense_field_losses_agree() {
    let fx = fixture(12, 3.0, 10);
    let gd = fx.ops.dense_gd();
    let hat = perturbed(&fx.sample.chi_true, 11, 0.5);
    let a = loss_field(&hat, &fx.sample, &fx.ops, 0.3).unwrap();
    let b = loss_field_dense(&hat, &fx.sample, &gd, 0.3).unwrap();
    assert!((a.value - b.value).abs() <= 1e-9 * b.value);
    let diff = (&a.grad_re - &b.grad_re).mapv(|v| v * v).sum() + (&a.grad_im - &b.grad_im).mapv(|v| v * v).sum();
    let norm = b.grad_re.mapv(|v| v * v).sum() + b.grad_im.mapv(|v| v * v).sum();
    assert!((diff / norm).sqrt() <= 1e-9);
}

#[test]
fn physics_losses_vanish_at_the_truth() {
    let fx = fixture(8, 2.0, 12);
    for kind in [LossKind::Contrast, LossKind::Current, LossKind::Field] {
        let e = evaluate(kind, &fx.sample.chi_true, &fx.sample, &fx.ops, 0.5).unwrap();
        assert!(e.value <= 1e-20, "{kind:?}: {}", e.value);
    }
}

/// Hand-built fields: J and E_tot are known so the data term can be computed by hand.
#[test]
fn current_loss_by_hand() {
    let mut fx = fixture(4, 2.0, 13);
    fx.sample.chi_true.chi.fill(Complex64::new(0.0, 0.0));
    fx.sample.chi_true.chi[[0, 0]] = Complex64::new(1.0, 0.0);
    fx.sample.etot_true.values.fill(Complex64::new(1.0, 0.0));
    fx.sample.j_true.values.fill(Complex64::new(0.0, 0.0));
    for v in 0..fx.sample.j_true.n_tx() {
        fx.sample.j_true.values[[v, 0]] = Complex64::new(1.0, 0.0);
    }
    let zero = ContrastMap::zeros(fx.sample.chi_true.grid);
    // Each transmitter contributes |1 - 0|² at pixel 0; the regularizer adds β·1.
    let e = loss_current(&zero, &fx.sample, 2.0).unwrap();
    let n_tx = fx.sample.j_true.n_tx() as f64;
    assert_eq!(e.value, 0.5 * n_tx + 2.0);
    assert_eq!(e.grad_re[[0, 0]], -n_tx - 4.0);
    assert_eq!(e.grad_re.iter().filter(|g| **g != 0.0).count(), 1);
}

#[test]
fn beta_arithmetic() {
    let mut fx = fixture(4, 2.0, 14);
    // ‖J‖² = 8 over all transmitters and ‖χ‖² = 2 gives β = 2·8/2 = 8.
    fx.sample.j_true.values.fill(Complex64::new(0.0, 0.0));
    fx.sample.j_true.values[[0, 0]] = Complex64::new(2.0, 2.0);
    fx.sample.chi_true.chi.fill(Complex64::new(0.0, 0.0));
    fx.sample.chi_true.chi[[1, 1]] = Complex64::new(1.0, 1.0);
    assert_eq!(batch_beta(LossKind::Current, &[&fx.sample]).unwrap(), 8.0);
    assert_eq!(batch_beta(LossKind::Contrast, &[&fx.sample]).unwrap(), 0.0);

    let mut twice = fx.sample.clone();
    twice.j_true.values.mapv_inplace(|c| c * 2.0);
    // Aggregates: ‖J‖² = 8 + 32, ‖χ‖² = 2 + 2.
    assert_eq!(batch_beta(LossKind::Current, &[&fx.sample, &twice]).unwrap(), 20.0);

    fx.sample.chi_true.chi.fill(Complex64::new(0.0, 0.0));
    assert!(matches!(batch_beta(LossKind::Current, &[&fx.sample]), Err(Error::Undefined(_))));
    assert!(batch_beta::<TrainingSample>(LossKind::Field, &[]).is_err());
}

#[test]
fn batch_loss_is_the_mean() {
    let a = fixture(8, 2.0, 15);
    let b = fixture(8, 3.0, 16);
    let batch = [&a.sample, &b.sample];
    let preds = [perturbed(&a.sample.chi_true, 1, 0.3), perturbed(&b.sample.chi_true, 2, 0.3)];
    let beta = batch_beta(LossKind::Field, &batch).unwrap();
    let (mean, evals) = batch_loss(LossKind::Field, &preds, &batch, &a.ops).unwrap();
    let single: Vec<f64> = preds
        .iter()
        .zip(batch)
        .map(|(p, s)| loss_field(p, s, &a.ops, beta).unwrap().value)
        .collect();
    assert!((mean - 0.5 * (single[0] + single[1])).abs() <= 1e-12 * mean);
    assert!((evals[0].value - 0.5 * single[0]).abs() <= 1e-12 * single[0]);
    assert!(batch_loss(LossKind::Field, &preds[..1], &batch, &a.ops).is_err());
}
