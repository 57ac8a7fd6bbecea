//! Reconstruction quality metrics and their dataset-level summaries.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ContrastMap;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Contrast range assumed for SSIM on `Re(χ)`.
pub const CONTRAST_RANGE: f64 = 4.0;

/// Mean over pixels of `|χ̂ - χ|²`.
pub fn mse(chi_hat: &ContrastMap, chi_true: &ContrastMap) -> Result<f64> {
    if chi_hat.chi.dim() != chi_true.chi.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            chi_hat.chi.dim(),
            chi_true.chi.dim()
        )));
    }
    let n = chi_hat.chi.len() as f64;
    Ok(chi_hat
        .chi
        .iter()
        .zip(chi_true.chi.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / n)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter restricted to fully interior window placements.
fn filter_valid(img: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = (0..k).map(|t| g[t] * img[[y, x + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..k).map(|t| g[t] * rows[[y + t, x]]).sum();
        }
    }
    out
}

/// Gaussian-window SSIM averaged over valid window placements.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, dynamic_range: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidArgument(format!("dynamic range must be positive, got {dynamic_range}")));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let mu_a = filter_valid(a, &g);
    let mu_b = filter_valid(b, &g);
    let aa = filter_valid(&(a * a), &g);
    let bb = filter_valid(&(b * b), &g);
    let ab = filter_valid(&(a * b), &g);
    let mut total = 0.0;
    for ((((ma, mb), saa), sbb), sab) in mu_a.iter().zip(&mu_b).zip(&aa).zip(&bb).zip(&ab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM of the real parts with the default contrast range.
pub fn ssim_contrast(chi_hat: &ContrastMap, chi_true: &ContrastMap) -> Result<f64> {
    ssim(&chi_hat.real_part(), &chi_true.real_part(), CONTRAST_RANGE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (`n - 1`); zero for a single value.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty list".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary { mean, median, std })
}

/// Per-sample metrics plus their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub mse: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mse_summary: Summary,
    pub ssim_summary: Summary,
}

impl MetricReport {
    pub fn from_pairs(label: impl Into<String>, predictions: &[ContrastMap], truths: &[ContrastMap]) -> Result<Self> {
        if predictions.len() != truths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions for {} targets",
                predictions.len(),
                truths.len()
            )));
        }
        let mut mses = Vec::with_capacity(truths.len());
        let mut ssims = Vec::with_capacity(truths.len());
        for (p, t) in predictions.iter().zip(truths) {
            mses.push(mse(p, t)?);
            ssims.push(ssim_contrast(p, t)?);
        }
        Self::from_values(label, mses, ssims)
    }

    pub fn from_values(label: impl Into<String>, mse: Vec<f64>, ssim: Vec<f64>) -> Result<Self> {
        Ok(MetricReport {
            label: label.into(),
            mse_summary: summarize(&mse)?,
            ssim_summary: summarize(&ssim)?,
            mse,
            ssim,
        })
    }

    /// `index,mse,ssim` rows.
    pub fn per_sample_csv(&self) -> String {
        let mut s = String::from("index,mse,ssim\n");
        for (i, (m, q)) in self.mse.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(s, "{i},{m:.17e},{q:.17e}");
        }
        s
    }

    pub const SUMMARY_HEADER: &'static str = "label,mse_mean,mse_median,mse_std,ssim_mean,ssim_median,ssim_std";

    pub fn summary_row(&self) -> String {
        let (m, q) = (&self.mse_summary, &self.ssim_summary);
        format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6},{:.6},{:.6}",
            self.label, m.mean, m.median, m.std, q.mean, q.median, q.std
        )
    }
}
