//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines are always printed.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use iscat_core::classic::{back_projection, bim_reconstruct, ista_solve, BimConfig, DenseOperator, IstaConfig, L1Weight, LinearOperator};
use iscat_core::experiment::{
    generate_records, grid_csv, mie_check, snr_grid_study, trend_checks, ExperimentConfig, MieCheckConfig, SimContext, Split,
};
use iscat_core::forward::{
    add_awgn, add_awgn_unscaled, incident_field, realized_snr_db, simulate, GreensOperators, ScatteringScene, SolverBackend,
};
use iscat_core::grid::{disk_phantom, make_grid, ContrastMap};
use iscat_core::loss::{batch_beta, loss_contrast, loss_current, loss_field, LossEval, LossKind, LossVariant, TrainingSample};
use iscat_core::metrics::{mse, ssim};
use iscat_core::net::{net_backward, net_forward, net_init, Mode, NetConfig, NetParams, Tensor};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMBDA0: f64 = 0.075;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cvec(r: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect()
}

fn scene(n: usize, antennas: usize) -> ScatteringScene {
    let grid = make_grid(n, n, 2.0 * LAMBDA0, 2.0 * LAMBDA0, LAMBDA0).unwrap();
    ScatteringScene::circular(grid, antennas, antennas, 4.0 * LAMBDA0).unwrap()
}

fn c1_forward_oracle() -> Outcome {
    let t = Instant::now();
    let cfg = MieCheckConfig::default();
    let m = mie_check(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let passed = m.per_tx.iter().all(|e| *e <= 0.03) && m.cells_per_medium_wavelength >= 15.0 && secs < 60.0;
    outcome(
        passed,
        format!(
            "worst relative L2 {:.3e} over {} tx (tol 3e-2), {:.1} cells per medium wavelength, {secs:.1} s (< 60 s)",
            m.max_error,
            m.per_tx.len(),
            m.cells_per_medium_wavelength
        ),
    )
}

fn c2_operator_equivalence() -> Outcome {
    let t = Instant::now();
    let ops = GreensOperators::build(&scene(16, 8)).unwrap();
    let dense = ops.dense_gd();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = cvec(&mut r, 256);
        let fast = ops.apply_gd(&x);
        let slow = dense.dot(&Array1::from(x));
        let num: f64 = fast.iter().zip(slow.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = slow.iter().map(|b| b.norm_sqr()).sum();
        worst = worst.max((num / den).sqrt());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 5.0, format!("max relative difference {worst:.2e} (tol 1e-10) over 50 vectors, {secs:.2} s (< 5 s)"))
}

fn c3_physics_identities() -> Outcome {
    let s = scene(16, 16);
    let ops = GreensOperators::build(&s).unwrap();
    let einc = incident_field(&s).unwrap();
    let empty = simulate(&ops, &einc, &ContrastMap::zeros(s.grid), SolverBackend::DenseLu).unwrap();
    let silent = empty.measured.frobenius_sqr().sqrt();

    let mut chi = disk_phantom(2.5, 0.4 * LAMBDA0, [0.2 * LAMBDA0, -0.1 * LAMBDA0], &s.grid).unwrap();
    chi.chi[[3, 4]] += Complex64::new(0.6, 0.0);
    let sim = simulate(&ops, &einc, &chi, SolverBackend::DenseLu).unwrap();
    let m = &sim.measured.values;
    let mut recip: f64 = 0.0;
    for v in 0..16 {
        for w in 0..16 {
            let (a, b) = (m[[v, w]], m[[w, v]]);
            recip = recip.max((a - b).norm() / a.norm().max(b.norm()));
        }
    }
    let mut gdj: f64 = 0.0;
    for (j, e) in sim.current.values.rows().into_iter().zip(sim.scattered_doi.values.rows()) {
        let g = ops.apply_gd(&j.to_vec());
        let num: f64 = g.iter().zip(e.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = e.iter().map(|b| b.norm_sqr()).sum();
        gdj = gdj.max((num / den).sqrt());
    }
    outcome(
        silent <= 1e-12 && recip <= 1e-8 && gdj <= 1e-9,
        format!("|E_sca| at zero contrast {silent:.1e} (tol 1e-12), reciprocity {recip:.1e} (tol 1e-8), GD·J {gdj:.1e} (tol 1e-9)"),
    )
}

fn loss_fixture(seed: u64) -> (GreensOperators, TrainingSample) {
    let s = scene(8, 6);
    let ops = GreensOperators::build(&s).unwrap();
    let einc = incident_field(&s).unwrap();
    let chi = disk_phantom(2.5, 0.5 * LAMBDA0, [0.1 * LAMBDA0 * seed as f64 / 5.0, -0.05 * LAMBDA0], &s.grid).unwrap();
    let sim = simulate(&ops, &einc, &chi, SolverBackend::DenseLu).unwrap();
    let sample = TrainingSample {
        chi_true: chi.clone(),
        chi_bp: chi,
        j_true: sim.current,
        etot_true: sim.total,
        esca_doi: sim.scattered_doi,
        scene_ref: "acceptance".into(),
    };
    (ops, sample)
}

fn fd_worst(f: &dyn Fn(&ContrastMap) -> LossEval, at: &ContrastMap, probes: usize, seed: u64) -> f64 {
    let base = f(at);
    let mut r = rng(seed);
    let (ny, nx) = at.chi.dim();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let idx = [r.random_range(0..ny), r.random_range(0..nx)];
        for (dir, grad) in [(Complex64::new(h, 0.0), &base.grad_re), (Complex64::new(0.0, h), &base.grad_im)] {
            let mut p = at.clone();
            p.chi[idx] += dir;
            let mut m = at.clone();
            m.chi[idx] -= dir;
            let fd = (f(&p).value - f(&m).value) / (2.0 * h);
            let a = grad[idx];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8 * base.value.abs().max(1.0)));
        }
    }
    worst
}

fn c4_loss_gradients() -> Outcome {
    let t = Instant::now();
    let (ops, sample) = loss_fixture(3);
    let mut r = rng(4);
    let mut hat = sample.chi_true.clone();
    hat.chi.mapv_inplace(|c| c + Complex64::new(r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)));
    let bc = batch_beta(LossKind::Current, &[&sample]).unwrap();
    let bf = batch_beta(LossKind::Field, &[&sample]).unwrap();
    let contrast = fd_worst(&|m| loss_contrast(m, &sample.chi_true).unwrap(), &hat, 20, 5);
    let current = fd_worst(&|m| loss_current(m, &sample, bc).unwrap(), &hat, 20, 6);
    let field = fd_worst(&|m| loss_field(m, &sample, &ops, bf).unwrap(), &hat, 20, 7);
    let secs = t.elapsed().as_secs_f64();
    let worst = contrast.max(current).max(field);
    outcome(
        worst <= 1e-6 && secs < 120.0,
        format!("contrast {contrast:.1e}, current {current:.1e}, field {field:.1e} (tol 1e-6, 20 probes x 2 channels), {secs:.1} s (< 120 s)"),
    )
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn net_fd_worst(cfg: &NetConfig, mode: Mode) -> f64 {
    let h = 1e-5;
    let mismatch = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
    let params = net_init(cfg).unwrap();
    let mut r = rng(8);
    let len = 2 * 2 * 8 * 8;
    let x = Tensor::from_vec(2, 2, 8, 8, (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let w = Tensor::from_vec(2, 2, 8, 8, (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let f = |p: &NetParams, t: &Tensor| dot(&net_forward(p, t, mode).unwrap().0, &w);
    let (_, cache) = net_forward(&params, &x, mode).unwrap();
    let (grads, dx) = net_backward(&params, &cache, &w).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..len {
        let mut p = x.clone();
        p.data[i] += h;
        let mut m = x.clone();
        m.data[i] -= h;
        worst = worst.max(mismatch(dx.data[i], (f(&params, &p) - f(&params, &m)) / (2.0 * h)));
    }
    for (slot, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let shifted = |d: f64| {
                let mut p = params.clone();
                p.visit_trainable_mut(|s, v| {
                    if s == slot {
                        v[i] += d;
                    }
                });
                f(&p, &x)
            };
            worst = worst.max(mismatch(g[i], (shifted(h) - shifted(-h)) / (2.0 * h)));
        }
    }
    worst
}

fn c5_network_backprop() -> Outcome {
    let t = Instant::now();
    let cfg = |bn: bool| NetConfig {
        height: 8,
        width: 8,
        depth: 1,
        base_channels: 2,
        use_batchnorm: bn,
        zero_init_head: false,
        rng_seed: 21,
        ..NetConfig::default()
    };
    let train = net_fd_worst(&cfg(true), Mode::Train);
    let eval = net_fd_worst(&cfg(true), Mode::Eval);
    let plain = net_fd_worst(&cfg(false), Mode::Train);
    let secs = t.elapsed().as_secs_f64();
    let worst = train.max(eval).max(plain);
    outcome(
        worst <= 1e-5 && secs < 120.0,
        format!(
            "all parameters and inputs: BN train {train:.1e}, BN eval {eval:.1e}, no BN {plain:.1e} (tol 1e-5), {secs:.1} s (< 120 s)"
        ),
    )
}

fn lasso_cd(a: &Array2<Complex64>, y: &[Complex64], beta: f64) -> Vec<Complex64> {
    let (m, n) = a.dim();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut r = y.to_vec();
    let norms: Vec<f64> = (0..n).map(|k| (0..m).map(|i| a[[i, k]].norm_sqr()).sum()).collect();
    for _ in 0..20000 {
        let mut change: f64 = 0.0;
        for k in 0..n {
            for i in 0..m {
                r[i] += a[[i, k]] * x[k];
            }
            let z: Complex64 = (0..m).map(|i| a[[i, k]].conj() * r[i]).sum::<Complex64>() / norms[k];
            let s = beta / norms[k];
            let new = if z.norm() > s { z * (1.0 - s / z.norm()) } else { Complex64::new(0.0, 0.0) };
            change = change.max((new - x[k]).norm());
            x[k] = new;
            for i in 0..m {
                r[i] -= a[[i, k]] * x[k];
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    x
}

fn c6_ista_bim() -> Outcome {
    let mut r = rng(6);
    let a = Array2::from_shape_fn((12, 8), |_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
    let y = cvec(&mut r, 12);
    let beta = 0.5;
    let cfg = IstaConfig {
        beta_l1: L1Weight::Fixed(beta),
        max_inner: 200_000,
        tol: 1e-15,
        lipschitz_safety: 1.05,
    };
    let op = DenseOperator(a.clone());
    let out = ista_solve(&op, &y, &cfg, &[Complex64::new(0.0, 0.0); 8]).unwrap();
    let monotone = out.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let oracle = lasso_cd(&a, &y, beta);
    let res: f64 = op.apply(&oracle).iter().zip(&y).map(|(p, q)| (p - q).norm_sqr()).sum();
    let f_oracle = 0.5 * res + beta * oracle.iter().map(|c| c.norm()).sum::<f64>();
    let gap = (out.objective.last().unwrap() - f_oracle).abs();

    let s = scene(24, 16);
    let ops = GreensOperators::build(&s).unwrap();
    let einc = incident_field(&s).unwrap();
    let chi = disk_phantom(1.5, 0.5 * LAMBDA0, [0.1 * LAMBDA0, 0.0], &s.grid).unwrap();
    let measured = simulate(&ops, &einc, &chi, SolverBackend::default()).unwrap().measured;
    let bp = back_projection(&measured, &ops, &einc).unwrap();
    let bim = bim_reconstruct(&measured, &ops, &einc, &BimConfig::default()).unwrap();
    let h = &bim.residual_history;
    let drop = h[0] / h.last().unwrap();
    let (m_bim, m_bp) = (mse(&bim.chi, &chi).unwrap(), mse(&bp, &chi).unwrap());
    outcome(
        monotone && gap <= 1e-6 && drop >= 10.0 && m_bim < m_bp,
        format!(
            "ISTA monotone {monotone} over {} iterations, LASSO gap {gap:.1e} (tol 1e-6), BIM residual drop {drop:.1}x (>= 10), MSE BIM {m_bim:.3e} < BP {m_bp:.3e}",
            out.objective.len() - 1
        ),
    )
}

fn c7_noise() -> Outcome {
    let s = scene(8, 8);
    let ops = GreensOperators::build(&s).unwrap();
    let einc = incident_field(&s).unwrap();
    let chi = disk_phantom(2.0, 0.5 * LAMBDA0, s.grid.center, &s.grid).unwrap();
    let clean = simulate(&ops, &einc, &chi, SolverBackend::default()).unwrap().measured;
    let mut exact: f64 = 0.0;
    let mut stat: f64 = 0.0;
    for snr in [30.0, 20.0, 5.0, 0.0] {
        for seed in 0..20 {
            exact = exact.max((realized_snr_db(&clean, &add_awgn(&clean, snr, seed).unwrap()) - snr).abs());
        }
        let power = (0..100).map(|seed| add_awgn_unscaled(&clean, snr, 1000 + seed).unwrap().1.frobenius_sqr()).sum::<f64>() / 100.0;
        stat = stat.max((10.0 * (clean.frobenius_sqr() / power).log10() - snr).abs());
    }
    outcome(
        exact <= 1e-9 && stat <= 0.1,
        format!("per-sample SNR error {exact:.1e} dB (tol 1e-9), 100-draw estimate error {stat:.3} dB (tol 0.1)"),
    )
}

fn ssim_direct(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> f64 {
    let k = 11;
    let g: Vec<f64> = (0..k).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (h, w) = a.dim();
    let mut acc = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let wt = |u: usize, v: usize| g[u] * g[v] / total;
            let mut s = [0.0; 5];
            for u in 0..k {
                for v in 0..k {
                    let (p, q) = (a[[y0 + u, x0 + v]], b[[y0 + u, x0 + v]]);
                    let c = wt(u, v);
                    s[0] += c * p;
                    s[1] += c * q;
                    s[2] += c * p * p;
                    s[3] += c * q * q;
                    s[4] += c * p * q;
                }
            }
            let (va, vb, cov) = (s[2] - s[0] * s[0], s[3] - s[1] * s[1], s[4] - s[0] * s[1]);
            acc += (2.0 * s[0] * s[1] + c1) * (2.0 * cov + c2) / ((s[0] * s[0] + s[1] * s[1] + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    acc / count
}

fn c8_metrics() -> Outcome {
    let a = Array2::from_shape_fn((16, 16), |(i, j)| 2.0 * (0.3 * i as f64 + 0.7 * j as f64).sin() + 1.0);
    let b = Array2::from_shape_fn((16, 16), |(i, j)| if (i as f64 - 8.0).powi(2) + (j as f64 - 8.0).powi(2) < 16.0 { 3.0 } else { 0.0 });
    let identical = (ssim(&a, &a, 4.0).unwrap() - 1.0).abs();
    let reference = (ssim(&a, &b, 4.0).unwrap() - ssim_direct(&a, &b, 4.0)).abs();

    let (_, mut sample) = loss_fixture(1);
    sample.j_true.values.fill(Complex64::new(0.0, 0.0));
    sample.j_true.values[[0, 0]] = Complex64::new(2.0, 2.0);
    sample.chi_true.chi.fill(Complex64::new(0.0, 0.0));
    sample.chi_true.chi[[1, 1]] = Complex64::new(1.0, 1.0);
    let beta = batch_beta(LossKind::Current, &[&sample]).unwrap();
    outcome(
        identical <= 1e-12 && reference <= 1e-9 && beta == 8.0,
        format!("|SSIM(a,a) - 1| {identical:.1e}, vs reference {reference:.1e} (tol 1e-9), beta {beta} (want 8)"),
    )
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&workspace_root().join("configs/desk.json")).unwrap();
    cfg.report.variants = vec![LossVariant::ContrastClean, LossVariant::Current, LossVariant::Field];
    cfg.report.train_snr = vec![5.0];
    cfg.report.test_snr = vec![20.0, 5.0];
    cfg.report.austria = false;
    cfg
}

fn c9_trend() -> Outcome {
    let t = Instant::now();
    let cfg = desk_config();
    let ctx = SimContext::new(&cfg.scene).unwrap();
    let train = generate_records(&ctx, &cfg.dataset, Split::Train, cfg.dataset.train_count).unwrap();
    let test = generate_records(&ctx, &cfg.dataset, Split::Test, cfg.dataset.test_count).unwrap();
    let (rows, _) = snr_grid_study(&ctx, &train, &test, &cfg.net, &cfg.train, &cfg.report).unwrap();
    let checks = trend_checks(&rows, &[(LossVariant::Current, 20.0), (LossVariant::Field, 5.0)]);
    let secs = t.elapsed().as_secs_f64();
    let report = std::env::temp_dir().join("iscat_acceptance_trend.csv");
    let _ = fs::write(&report, grid_csv(&rows));
    let shape_ok = cfg.scene.nx == 32
        && cfg.dataset.train_count == 200
        && cfg.dataset.test_count == 100
        && cfg.net.depth == 2
        && cfg.train.epochs_max >= 60;
    let holds = checks.len() == 2 && checks.iter().all(|c| c.holds);
    let parts: Vec<String> = checks
        .iter()
        .map(|c| {
            format!(
                "{} {:.3e} vs contrast-clean {:.3e} at {} dB{}",
                c.challenger,
                c.challenger_mse,
                c.baseline_mse,
                c.test_snr,
                if c.holds { "" } else { " [NOT REPRODUCED]" }
            )
        })
        .collect();
    outcome(
        holds && shape_ok && secs < 7200.0,
        format!("{}; {} epochs; table in {}; {:.0} s (< 7200 s)", parts.join("; "), cfg.train.epochs_max, report.display(), secs),
    )
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_iscat")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let smoke = workspace_root().join("configs/smoke.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&smoke).unwrap()).unwrap();
    let full = tmp.path().join("full.json");
    fs::write(&full, v.to_string()).unwrap();
    v["train"]["epochs_max"] = 1.into();
    let short = tmp.path().join("short.json");
    fs::write(&short, v.to_string()).unwrap();
    let p = |s: &Path| s.to_str().unwrap().to_string();

    let mut runs = Vec::new();
    for name in ["run1", "run2"] {
        let root = tmp.path().join(name);
        let (data, model, eval) = (root.join("data"), root.join("model"), root.join("eval"));
        let c = p(&full);
        run_cli(&["--threads", "1", "--config", &c, "--out", &p(&data), "gen"]);
        run_cli(&["--threads", "1", "--config", &c, "--out", &p(&root.join("bim")), "bim", "--data", &p(&data)]);
        run_cli(&["--threads", "1", "--config", &c, "--out", &p(&model), "train", "--data", &p(&data)]);
        let ck = p(&model.join("checkpoint.isck"));
        run_cli(&["--threads", "1", "--config", &c, "--out", &p(&eval), "eval", "--data", &p(&data), "--checkpoint", &ck]);
        run_cli(&["--threads", "1", "--config", &c, "--out", &p(&root.join("report")), "report", "--data", &p(&data)]);
        runs.push(tree(&root));
    }
    let files = runs[0].len();
    let identical = runs[0] == runs[1];

    let root = tmp.path().join("run1");
    let resumed = tmp.path().join("resumed");
    let data = p(&root.join("data"));
    run_cli(&["--threads", "1", "--config", &p(&short), "--out", &p(&resumed), "train", "--data", &data]);
    let ck = p(&resumed.join("checkpoint.isck"));
    run_cli(&["--threads", "1", "--config", &p(&full), "--out", &p(&resumed), "train", "--data", &data, "--resume", &ck]);
    let same_ck = fs::read(resumed.join("checkpoint.isck")).unwrap() == fs::read(root.join("model/checkpoint.isck")).unwrap();
    let same_log = fs::read(resumed.join("train_log.csv")).unwrap() == fs::read(root.join("model/train_log.csv")).unwrap();
    outcome(
        identical && same_ck && same_log,
        format!("{files} output files bitwise identical across reruns: {identical}; resumed checkpoint identical: {same_ck}; log identical: {same_log}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("forward-solver oracle", c1_forward_oracle),
        ("operator equivalence", c2_operator_equivalence),
        ("physics identities", c3_physics_identities),
        ("loss-gradient suite", c4_loss_gradients),
        ("network backprop suite", c5_network_backprop),
        ("ISTA/BIM", c6_ista_bim),
        ("noise calibration", c7_noise),
        ("metric oracles", c8_metrics),
        ("trend reproduction", c9_trend),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<usize> = std::env::var("ISCAT_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    // The trend study is statistical: its outcome is reported and flagged but
    // does not fail the run. Every other criterion is enforced.
    const REPORTED_ONLY: usize = 9;
    let mut failed = 0;
    let mut flagged = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            if n == REPORTED_ONLY {
                flagged += 1;
            } else {
                failed += 1;
            }
        }
        println!("criterion {n:>2} {name}: {} ({})", if result.passed { "PASS" } else { "FAIL" }, result.detail);
    }
    if flagged > 0 {
        println!("criterion {REPORTED_ONLY} did not reproduce the trend; reported, not enforced");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
