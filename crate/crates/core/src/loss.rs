//! Training losses over a predicted contrast `χ̂ = χ̂_re + i χ̂_im`.
//!
//! Every loss returns its value together with the gradient split into the two
//! real output channels. Norms sum over all transmitters and pixels.

use std::borrow::Borrow;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{FieldSet, GreensOperators};
use crate::grid::ContrastMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Contrast,
    Current,
    Field,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrast" => Ok(LossKind::Contrast),
            "current" => Ok(LossKind::Current),
            "field" => Ok(LossKind::Field),
            other => Err(Error::InvalidArgument(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Training variant: loss kind plus which data it sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// Contrast loss on noise-free network inputs.
    ContrastClean,
    /// Contrast loss on noisy network inputs.
    ContrastNoisy,
    Current,
    Field,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::ContrastClean,
        LossVariant::ContrastNoisy,
        LossVariant::Current,
        LossVariant::Field,
    ];

    pub fn kind(self) -> LossKind {
        match self {
            LossVariant::ContrastClean | LossVariant::ContrastNoisy => LossKind::Contrast,
            LossVariant::Current => LossKind::Current,
            LossVariant::Field => LossKind::Field,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LossVariant::ContrastClean => "contrast-clean",
            LossVariant::ContrastNoisy => "contrast-noisy",
            LossVariant::Current => "current",
            LossVariant::Field => "field",
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss variant {s:?}")))
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One supervised example.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub chi_true: ContrastMap,
    /// Network input.
    pub chi_bp: ContrastMap,
    pub j_true: FieldSet,
    pub etot_true: FieldSet,
    /// Scattered field in the DOI used as the field-loss target (possibly noisy).
    pub esca_doi: FieldSet,
    pub scene_ref: String,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.chi_true.grid.len();
        if self.chi_bp.grid != self.chi_true.grid {
            return Err(Error::ShapeMismatch("input and target grids differ".into()));
        }
        let n_tx = self.j_true.n_tx();
        for f in [&self.j_true, &self.etot_true, &self.esca_doi] {
            if f.n_points() != n || f.n_tx() != n_tx {
                return Err(Error::ShapeMismatch(format!(
                    "field {:?} has shape {:?}, expected ({n_tx}, {n})",
                    f.role,
                    f.values.dim()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad_re: Array2<f64>,
    pub grad_im: Array2<f64>,
    pub beta_used: f64,
}

impl LossEval {
    fn from_complex(value: f64, grad: &[Complex64], shape: (usize, usize), beta: f64) -> Result<Self> {
        let grad_re = Array2::from_shape_vec(shape, grad.iter().map(|g| g.re).collect())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let grad_im = Array2::from_shape_vec(shape, grad.iter().map(|g| g.im).collect())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let eval = LossEval {
            value,
            grad_re,
            grad_im,
            beta_used: beta,
        };
        if !eval.value.is_finite() || eval.grad_re.iter().chain(eval.grad_im.iter()).any(|g| !g.is_finite()) {
            return Err(Error::Divergence("loss or gradient is not finite".into()));
        }
        Ok(eval)
    }
}

fn check_maps(a: &ContrastMap, b: &ContrastMap) -> Result<()> {
    if a.chi.dim() != b.chi.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            a.chi.dim(),
            b.chi.dim()
        )));
    }
    Ok(())
}

fn sq_norm<'a>(it: impl Iterator<Item = &'a Complex64>) -> f64 {
    it.map(|c| c.norm_sqr()).sum()
}

/// `β = 2 Σ‖Q‖² / Σ‖χ‖²` over the batch, `Q` being the current or the field target.
/// The contrast loss has no regularizer and gets `β = 0`.
pub fn batch_beta<S: Borrow<TrainingSample>>(kind: LossKind, batch: &[S]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if kind == LossKind::Contrast {
        return Ok(0.0);
    }
    let mut q = 0.0;
    let mut chi = 0.0;
    for s in batch {
        let s = s.borrow();
        let target = if kind == LossKind::Current { &s.j_true } else { &s.esca_doi };
        q += target.frobenius_sqr();
        chi += sq_norm(s.chi_true.chi.iter());
    }
    if chi == 0.0 {
        return Err(Error::Undefined("β is undefined for a batch with zero contrast".into()));
    }
    Ok(2.0 * q / chi)
}

/// `‖χ̂ - χ‖²`.
pub fn loss_contrast(chi_hat: &ContrastMap, chi_true: &ContrastMap) -> Result<LossEval> {
    check_maps(chi_hat, chi_true)?;
    let d: Vec<Complex64> = chi_hat.chi.iter().zip(chi_true.chi.iter()).map(|(a, b)| a - b).collect();
    let value = sq_norm(d.iter());
    let grad: Vec<Complex64> = d.iter().map(|x| x * 2.0).collect();
    LossEval::from_complex(value, &grad, chi_hat.chi.dim(), 0.0)
}

fn regularized(
    chi_hat: &ContrastMap,
    chi_true: &ContrastMap,
    data_value: f64,
    mut grad: Vec<Complex64>,
    beta: f64,
) -> Result<LossEval> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("β must be >= 0, got {beta}")));
    }
    let mut reg = 0.0;
    for ((g, h), t) in grad.iter_mut().zip(chi_hat.chi.iter()).zip(chi_true.chi.iter()) {
        let d = h - t;
        reg += d.norm_sqr();
        *g += d * (2.0 * beta);
    }
    LossEval::from_complex(data_value + beta * reg, &grad, chi_hat.chi.dim(), beta)
}

/// `½ Σ_v ‖J_v - E_v ⊙ χ̂‖² + β ‖χ - χ̂‖²`.
pub fn loss_current(chi_hat: &ContrastMap, sample: &TrainingSample, beta: f64) -> Result<LossEval> {
    check_maps(chi_hat, &sample.chi_true)?;
    sample.validate()?;
    let h = chi_hat.to_vec();
    let mut grad = vec![Complex64::new(0.0, 0.0); h.len()];
    let mut data = 0.0;
    for (j, e) in sample.j_true.values.rows().into_iter().zip(sample.etot_true.values.rows()) {
        for (k, g) in grad.iter_mut().enumerate() {
            let r = j[k] - e[k] * h[k];
            data += r.norm_sqr();
            *g -= e[k].conj() * r;
        }
    }
    regularized(chi_hat, &sample.chi_true, 0.5 * data, grad, beta)
}

fn field_loss_with<A, H>(chi_hat: &ContrastMap, sample: &TrainingSample, beta: f64, apply: A, adjoint: H) -> Result<LossEval>
where
    A: Fn(&[Complex64]) -> Vec<Complex64>,
    H: Fn(&[Complex64]) -> Vec<Complex64>,
{
    check_maps(chi_hat, &sample.chi_true)?;
    sample.validate()?;
    let h = chi_hat.to_vec();
    let mut grad = vec![Complex64::new(0.0, 0.0); h.len()];
    let mut data = 0.0;
    for (target, e) in sample.esca_doi.values.rows().into_iter().zip(sample.etot_true.values.rows()) {
        let j: Vec<Complex64> = e.iter().zip(&h).map(|(e, c)| e * c).collect();
        let predicted = apply(&j);
        let r: Vec<Complex64> = target.iter().zip(&predicted).map(|(t, p)| t - p).collect();
        data += sq_norm(r.iter());
        let back = adjoint(&r);
        for ((g, e), b) in grad.iter_mut().zip(e.iter()).zip(&back) {
            *g -= e.conj() * b;
        }
    }
    regularized(chi_hat, &sample.chi_true, 0.5 * data, grad, beta)
}

/// `½ Σ_v ‖E^sca_v - GD (E_v ⊙ χ̂)‖² + β ‖χ - χ̂‖²` with `GD` applied by FFT.
pub fn loss_field(chi_hat: &ContrastMap, sample: &TrainingSample, ops: &GreensOperators, beta: f64) -> Result<LossEval> {
    if ops.grid().len() != chi_hat.grid.len() {
        return Err(Error::ShapeMismatch("operators built for a different grid".into()));
    }
    field_loss_with(chi_hat, sample, beta, |x| ops.apply_gd(x), |x| ops.apply_gd_adjoint(x))
}

/// Same as [`loss_field`] with an explicit `GD` matrix.
pub fn loss_field_dense(chi_hat: &ContrastMap, sample: &TrainingSample, gd: &Array2<Complex64>, beta: f64) -> Result<LossEval> {
    let n = chi_hat.grid.len();
    if gd.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!("GD is {:?}, grid has {n} pixels", gd.dim())));
    }
    let apply = |x: &[Complex64]| -> Vec<Complex64> {
        gd.rows().into_iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    };
    let adjoint = |x: &[Complex64]| -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (row, xi) in gd.rows().into_iter().zip(x) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * xi;
            }
        }
        out
    };
    field_loss_with(chi_hat, sample, beta, apply, adjoint)
}

/// Dispatch on the loss kind.
pub fn evaluate(
    kind: LossKind,
    chi_hat: &ContrastMap,
    sample: &TrainingSample,
    ops: &GreensOperators,
    beta: f64,
) -> Result<LossEval> {
    match kind {
        LossKind::Contrast => loss_contrast(chi_hat, &sample.chi_true),
        LossKind::Current => loss_current(chi_hat, sample, beta),
        LossKind::Field => loss_field(chi_hat, sample, ops, beta),
    }
}

/// Batch loss: mean of per-sample values, each gradient scaled by `1/B`.
/// `β` comes from the batch aggregate.
pub fn batch_loss<S: Borrow<TrainingSample>>(
    kind: LossKind,
    predictions: &[ContrastMap],
    batch: &[S],
    ops: &GreensOperators,
) -> Result<(f64, Vec<LossEval>)> {
    if predictions.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} samples",
            predictions.len(),
            batch.len()
        )));
    }
    let beta = batch_beta(kind, batch)?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut evals = Vec::with_capacity(batch.len());
    for (p, s) in predictions.iter().zip(batch) {
        let mut e = evaluate(kind, p, s.borrow(), ops, beta)?;
        total += e.value;
        e.value *= scale;
        e.grad_re.mapv_inplace(|g| g * scale);
        e.grad_im.mapv_inplace(|g| g * scale);
        evals.push(e);
    }
    Ok((total * scale, evals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::FieldRole;
    use crate::grid::make_grid;

    fn tiny(j_sqr: f64, chi_sqr: f64) -> TrainingSample {
        let g = make_grid(4, 4, 0.04, 0.04, 0.075).unwrap();
        let mut chi = ContrastMap::zeros(g);
        chi.chi[[0, 0]] = Complex64::new(chi_sqr.sqrt(), 0.0);
        let mut j = Array2::zeros((1, 16));
        j[[0, 3]] = Complex64::new(0.0, j_sqr.sqrt());
        TrainingSample {
            chi_true: chi.clone(),
            chi_bp: chi,
            j_true: FieldSet::new(FieldRole::Current, j),
            etot_true: FieldSet::new(FieldRole::TotalDoi, Array2::zeros((1, 16))),
            esca_doi: FieldSet::new(FieldRole::ScatteredDoi, Array2::zeros((1, 16))),
            scene_ref: "tiny".into(),
        }
    }

    #[test]
    fn beta_arithmetic() {
        let s = tiny(8.0, 2.0);
        assert!((batch_beta(LossKind::Current, std::slice::from_ref(&s)).unwrap() - 8.0).abs() < 1e-12);
        assert!((batch_beta(LossKind::Current, &[s.clone(), s.clone(), s]).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn beta_requires_contrast() {
        let mut s = tiny(8.0, 2.0);
        s.chi_true = ContrastMap::zeros(s.chi_true.grid);
        assert!(matches!(batch_beta(LossKind::Field, &[s]), Err(Error::Undefined(_))));
        assert!(batch_beta::<TrainingSample>(LossKind::Field, &[]).is_err());
    }

    #[test]
    fn contrast_unit_offset() {
        let s = tiny(1.0, 1.0);
        let mut hat = s.chi_true.clone();
        hat.chi[[1, 2]] += Complex64::new(1.0, 0.0);
        let e = loss_contrast(&hat, &s.chi_true).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.grad_re[[1, 2]], 2.0);
        assert_eq!(e.grad_re.iter().filter(|g| **g != 0.0).count(), 1);
    }

    #[test]
    fn current_decouples_without_field() {
        let s = tiny(8.0, 2.0);
        let hat = ContrastMap::zeros(s.chi_true.grid);
        let e = loss_current(&hat, &s, 3.0).unwrap();
        assert!((e.value - (0.5 * 8.0 + 3.0 * 2.0)).abs() < 1e-12);
    }
}
