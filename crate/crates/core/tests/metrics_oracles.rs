use iscat_core::grid::{make_grid, ContrastMap};
use iscat_core::metrics::{mse, ssim, ssim_contrast, summarize, MetricReport};
use ndarray::Array2;
use num_complex::Complex64;

fn images(h: usize, w: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let a = Array2::from_shape_fn((h, w), |(i, j)| 2.0 * (0.3 * i as f64 + 0.7 * j as f64).sin() + 1.0);
    let b = Array2::from_shape_fn((h, w), |(i, j)| a[[i, j]] + 0.5 * (1.1 * (i * j) as f64 / 7.0).cos());
    let c = Array2::from_shape_fn((h, w), |(i, j)| {
        let (di, dj) = (i as f64 - h as f64 / 2.0, j as f64 - w as f64 / 2.0);
        if di * di + dj * dj < (h as f64 / 4.0).powi(2) { 3.0 } else { 0.0 }
    });
    (a, b, c)
}

/// SSIM evaluated window by window with an explicit 2-D Gaussian.
fn ssim_direct(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> f64 {
    let k = 11;
    let g1: Vec<f64> = (0..k).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut w2 = vec![0.0; k * k];
    for u in 0..k {
        for v in 0..k {
            w2[u * k + v] = g1[u] * g1[v];
        }
    }
    let s: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|x| *x /= s);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (h, w) = a.dim();
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..k {
                for v in 0..k {
                    ma += w2[u * k + v] * a[[y0 + u, x0 + v]];
                    mb += w2[u * k + v] * b[[y0 + u, x0 + v]];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..k {
                for v in 0..k {
                    let (da, db) = (a[[y0 + u, x0 + v]] - ma, b[[y0 + u, x0 + v]] - mb);
                    va += w2[u * k + v] * da * da;
                    vb += w2[u * k + v] * db * db;
                    cov += w2[u * k + v] * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_window_loop() {
    for (h, w) in [(11, 11), (16, 16), (32, 24), (13, 29)] {
        let (a, b, c) = images(h, w);
        for (x, y) in [(&a, &b), (&a, &c), (&c, &b)] {
            let got = ssim(x, y, 4.0).unwrap();
            let want = ssim_direct(x, y, 4.0);
            assert!((got - want).abs() <= 1e-9, "{h}x{w}: {got} vs {want}");
        }
    }
}

#[test]
fn ssim_matches_reference_library_values() {
    // Gaussian-weighted SSIM with sigma 1.5, population covariance, data range 4,
    // as produced by a widely used image-processing library.
    let frozen = [
        ((16, 16), [0.9303690733662014, 0.3303772899883301, 0.34134940814134995]),
        ((32, 24), [0.9538683057256837, -0.007976670920213534, 0.0006111291800525691]),
        ((11, 11), [0.07542338451537473, -0.0003251773450405328, 0.03487021138163922]),
    ];
    for ((h, w), want) in frozen {
        let (a, b, c) = images(h, w);
        for ((x, y), v) in [(&a, &b), (&a, &c), (&c, &b)].into_iter().zip(want) {
            let got = ssim(x, y, 4.0).unwrap();
            assert!((got - v).abs() <= 1e-9, "{h}x{w}: {got} vs {v}");
        }
    }
}

#[test]
fn ssim_is_symmetric_and_bounded() {
    let (a, b, c) = images(20, 20);
    for (x, y) in [(&a, &b), (&a, &c), (&b, &c)] {
        let s = ssim(x, y, 4.0).unwrap();
        assert!((s - ssim(y, x, 4.0).unwrap()).abs() < 1e-14);
        assert!((-1.0..=1.0).contains(&s));
    }
    assert!(ssim(&a, &b, 0.0).is_err());
    assert!(ssim(&a, &Array2::zeros((20, 19)), 4.0).is_err());
}

fn map(grid: iscat_core::grid::GridSpec, f: impl Fn(usize, usize) -> Complex64) -> ContrastMap {
    let mut m = ContrastMap::zeros(grid);
    m.chi = Array2::from_shape_fn((grid.ny, grid.nx), |(i, j)| f(i, j));
    m
}

#[test]
fn contrast_metrics_use_complex_mse_and_real_ssim() {
    let g = make_grid(12, 12, 0.15, 0.15, 0.075).unwrap();
    let truth = map(g, |i, j| Complex64::new(((i + j) % 3) as f64, 0.0));
    let shifted = map(g, |i, j| truth.chi[[i, j]] + Complex64::new(0.0, 2.0));
    assert_eq!(mse(&shifted, &truth).unwrap(), 4.0);
    // An imaginary offset leaves the real-part SSIM perfect.
    assert!((ssim_contrast(&shifted, &truth).unwrap() - 1.0).abs() < 1e-14);
    let other = make_grid(12, 11, 0.15, 0.15, 0.075).unwrap();
    assert!(mse(&ContrastMap::zeros(other), &truth).is_err());
}

#[test]
fn report_summaries_recompute_from_rows() {
    let g = make_grid(12, 12, 0.15, 0.15, 0.075).unwrap();
    let truths: Vec<ContrastMap> = (0..5).map(|k| map(g, |i, j| Complex64::new(((i * k + j) % 4) as f64 * 0.5, 0.0))).collect();
    let preds: Vec<ContrastMap> = truths
        .iter()
        .enumerate()
        .map(|(k, t)| map(g, |i, j| t.chi[[i, j]] + Complex64::new(0.1 * k as f64 * ((i + j) % 2) as f64, 0.05)))
        .collect();
    let r = MetricReport::from_pairs("demo", &preds, &truths).unwrap();

    // Per-sample CSV values parse back to the same numbers.
    let csv = r.per_sample_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,mse,ssim"));
    let mut mses = Vec::new();
    for (k, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0].parse::<usize>().unwrap(), k);
        let m: f64 = cols[1].parse().unwrap();
        assert_eq!(m, r.mse[k]);
        assert_eq!(m, mse(&preds[k], &truths[k]).unwrap());
        mses.push(m);
    }
    let s = summarize(&mses).unwrap();
    assert_eq!(s, r.mse_summary);
    let mean = mses.iter().sum::<f64>() / 5.0;
    let mut sorted = mses.clone();
    sorted.sort_by(f64::total_cmp);
    let std = (mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((s.mean - mean).abs() < 1e-15 && s.median == sorted[2] && (s.std - std).abs() < 1e-15);

    let row = r.summary_row();
    assert!(row.starts_with("demo,"));
    assert_eq!(row.split(',').count(), MetricReport::SUMMARY_HEADER.split(',').count());
    assert!(MetricReport::from_pairs("bad", &preds[..2], &truths).is_err());
}
