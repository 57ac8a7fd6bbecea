//! Conventional inversion: back-propagation initializer and the Born iterative
//! method with an ISTA inner solver for the ℓ1-regularized linear step.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{solve_total_field_with, FieldRole, FieldSet, GreensOperators, SolverBackend};
use crate::grid::ContrastMap;

/// A linear map with an adjoint.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;
    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64>;
}

/// Explicit matrix operator.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub Array2<Complex64>);

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.0.nrows()
    }

    fn cols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.0
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols()];
        for (row, yi) in self.0.rows().into_iter().zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * yi;
            }
        }
        out
    }
}

/// Stacked linearized data operator `χ ↦ [gm diag(E_v) χ]_v` over all transmitters.
pub struct BornOperator<'a> {
    gm: &'a Array2<Complex64>,
    fields: &'a Array2<Complex64>,
}

impl<'a> BornOperator<'a> {
    pub fn new(gm: &'a Array2<Complex64>, fields: &'a Array2<Complex64>) -> Result<Self> {
        if gm.ncols() != fields.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "receiver operator has {} columns, fields have {}",
                gm.ncols(),
                fields.ncols()
            )));
        }
        Ok(BornOperator { gm, fields })
    }
}

impl LinearOperator for BornOperator<'_> {
    fn rows(&self) -> usize {
        self.fields.nrows() * self.gm.nrows()
    }

    fn cols(&self) -> usize {
        self.gm.ncols()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.rows());
        for e in self.fields.rows() {
            let j: Vec<Complex64> = e.iter().zip(x).map(|(e, c)| e * c).collect();
            for g in self.gm.rows() {
                out.push(g.iter().zip(&j).map(|(a, b)| a * b).sum());
            }
        }
        out
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n_rx = self.gm.nrows();
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols()];
        let mut u = vec![Complex64::new(0.0, 0.0); self.cols()];
        for (v, e) in self.fields.rows().into_iter().enumerate() {
            u.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (g, yr) in self.gm.rows().into_iter().zip(&y[v * n_rx..(v + 1) * n_rx]) {
                for (uu, a) in u.iter_mut().zip(g) {
                    *uu += a.conj() * yr;
                }
            }
            for ((o, uu), ee) in out.iter_mut().zip(&u).zip(e) {
                *o += ee.conj() * uu;
            }
        }
        out
    }
}

/// Back-propagation estimate of the contrast.
///
/// Per transmitter the current is taken along `gmᴴ E_v`, scaled by the
/// least-squares factor that best reproduces the measurements; the contrast is
/// then the pixelwise least-squares ratio of currents to the implied total fields.
pub fn back_projection(escamea: &FieldSet, ops: &GreensOperators, einc: &FieldSet) -> Result<ContrastMap> {
    let gm = ops.gm();
    let grid = *ops.grid();
    let n = grid.len();
    if escamea.n_points() != gm.nrows() || einc.n_points() != n || escamea.n_tx() != einc.n_tx() {
        return Err(Error::ShapeMismatch(format!(
            "measurements {:?}, incident {:?}, receiver operator {:?}",
            escamea.values.dim(),
            einc.values.dim(),
            gm.dim()
        )));
    }
    let mut num = vec![Complex64::new(0.0, 0.0); n];
    let mut den = vec![0.0_f64; n];
    for (e, inc) in escamea.values.axis_iter(Axis(0)).zip(einc.values.axis_iter(Axis(0))) {
        let mut u = vec![Complex64::new(0.0, 0.0); n];
        for (row, er) in gm.rows().into_iter().zip(e.iter()) {
            for (uu, g) in u.iter_mut().zip(row) {
                *uu += g.conj() * er;
            }
        }
        let w: Vec<Complex64> = gm
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&u).map(|(a, b)| a * b).sum())
            .collect();
        let ww: f64 = w.iter().map(|c| c.norm_sqr()).sum();
        if ww == 0.0 {
            return Err(Error::Undefined(
                "back-propagation scale is undefined for all-zero measurements".into(),
            ));
        }
        let we: Complex64 = w.iter().zip(e.iter()).map(|(a, b)| a.conj() * b).sum();
        let gamma = we / ww;
        let j: Vec<Complex64> = u.iter().map(|c| c * gamma).collect();
        let scattered = ops.apply_gd(&j);
        for k in 0..n {
            let et = inc[k] + scattered[k];
            num[k] += j[k] * et.conj();
            den[k] += et.norm_sqr();
        }
    }
    if den.contains(&0.0) {
        return Err(Error::Undefined("total field vanishes at a pixel".into()));
    }
    let chi: Vec<Complex64> = num.iter().zip(&den).map(|(a, b)| a / b).collect();
    ContrastMap::from_vec(grid, chi)
}

/// Soft threshold with the half-width convention: the dead zone is `|x| < θ/2`.
pub fn soft_threshold(x: f64, theta: f64) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {theta}")));
    }
    Ok(soft_threshold_unchecked(x, theta))
}

fn soft_threshold_unchecked(x: f64, theta: f64) -> f64 {
    let h = 0.5 * theta;
    if x <= -h {
        x + h
    } else if x >= h {
        x - h
    } else {
        0.0
    }
}

/// Complex extension: shrinks the magnitude, keeps the phase.
pub fn soft_threshold_complex(z: Complex64, theta: f64) -> Complex64 {
    let m = z.norm();
    let shrunk = soft_threshold_unchecked(m, theta);
    if shrunk == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * (shrunk / m)
    }
}

/// `safety · λ_max(GᴴG)` by power iteration (100 steps or 1e-6 relative change).
pub fn lipschitz_estimate(op: &dyn LinearOperator, safety: f64) -> f64 {
    let n = op.cols();
    // Deterministic start with no special alignment to structured operators.
    let mut x: Vec<Complex64> = (0..n)
        .map(|k| Complex64::new(1.0 + 0.1 * (k as f64 * 0.7).sin(), 0.05 * (k as f64 * 1.3).cos()))
        .collect();
    let mut lambda = 0.0;
    for _ in 0..100 {
        let nx = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|c| *c /= nx);
        let y = op.apply_adjoint(&op.apply(&x));
        let next: f64 = x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
        x = y;
        let done = lambda > 0.0 && ((next - lambda) / next).abs() < 1e-6;
        lambda = next;
        if done {
            break;
        }
    }
    safety * lambda
}

/// How the ℓ1 weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum L1Weight {
    Fixed(f64),
    /// `β = factor · ‖b‖∞ · L` with `b = Gᴴy / L`.
    RelativeToData(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IstaConfig {
    pub beta_l1: L1Weight,
    pub max_inner: usize,
    pub tol: f64,
    pub lipschitz_safety: f64,
}

impl Default for IstaConfig {
    fn default() -> Self {
        IstaConfig {
            beta_l1: L1Weight::RelativeToData(0.01),
            max_inner: 200,
            tol: 1e-6,
            lipschitz_safety: 1.05,
        }
    }
}

impl IstaConfig {
    fn validate(&self) -> Result<()> {
        let beta_ok = match self.beta_l1 {
            L1Weight::Fixed(b) | L1Weight::RelativeToData(b) => b >= 0.0 && b.is_finite(),
        };
        if !beta_ok || self.max_inner == 0 || !(self.tol > 0.0) || !(self.lipschitz_safety > 1.0) {
            return Err(Error::InvalidArgument(format!("invalid ISTA config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IstaOutcome {
    pub chi: Vec<Complex64>,
    /// Objective before the first step and after every step.
    pub objective: Vec<f64>,
    pub lipschitz: f64,
    pub beta: f64,
}

fn objective(op: &dyn LinearOperator, y: &[Complex64], chi: &[Complex64], beta: f64) -> (f64, Vec<Complex64>) {
    let r: Vec<Complex64> = op.apply(chi).iter().zip(y).map(|(a, b)| a - b).collect();
    let data = 0.5 * r.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let l1: f64 = chi.iter().map(|c| c.norm()).sum();
    (data + beta * l1, r)
}

/// Minimizes `½‖y - Gχ‖² + β‖χ‖₁` by iterating `χ ← S_θ(Aχ + b)` with
/// `A = I - GᴴG/L`, `b = Gᴴy/L` and `θ = 2β/L` (the half-width threshold
/// convention makes this the exact proximal step).
pub fn ista_solve(op: &dyn LinearOperator, y: &[Complex64], cfg: &IstaConfig, chi0: &[Complex64]) -> Result<IstaOutcome> {
    cfg.validate()?;
    if y.len() != op.rows() || chi0.len() != op.cols() {
        return Err(Error::ShapeMismatch(format!(
            "operator {}x{}, data {}, start {}",
            op.rows(),
            op.cols(),
            y.len(),
            chi0.len()
        )));
    }
    let lipschitz = lipschitz_estimate(op, cfg.lipschitz_safety);
    if !(lipschitz > 0.0) {
        // Null operator: the minimizer of β‖χ‖₁ alone.
        return Ok(IstaOutcome {
            chi: vec![Complex64::new(0.0, 0.0); op.cols()],
            objective: vec![0.5 * y.iter().map(|c| c.norm_sqr()).sum::<f64>()],
            lipschitz,
            beta: 0.0,
        });
    }
    let beta = match cfg.beta_l1 {
        L1Weight::Fixed(b) => b,
        L1Weight::RelativeToData(f) => {
            let gy = op.apply_adjoint(y);
            f * gy.iter().map(|c| c.norm()).fold(0.0, f64::max)
        }
    };
    let theta = 2.0 * beta / lipschitz;
    let step = 1.0 / lipschitz;

    let mut chi = chi0.to_vec();
    let (mut f, mut r) = objective(op, y, &chi, beta);
    let mut history = vec![f];
    // Increases below this floor are rounding noise once the residual vanishes.
    let y_energy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let floor = 1e-13 * (f + y_energy);
    for _ in 0..cfg.max_inner {
        let grad = op.apply_adjoint(&r);
        for (c, g) in chi.iter_mut().zip(&grad) {
            *c = soft_threshold_complex(*c - g * step, theta);
        }
        let (f_new, r_new) = objective(op, y, &chi, beta);
        if !f_new.is_finite() {
            return Err(Error::Divergence(format!("ISTA objective became {f_new}")));
        }
        if f_new > f * (1.0 + 1e-12) + floor {
            return Err(Error::Divergence(format!(
                "ISTA objective increased from {f:.6e} to {f_new:.6e}; Lipschitz estimate too small"
            )));
        }
        history.push(f_new);
        let rel = (f - f_new).abs() / f.max(1e-300);
        f = f_new;
        r = r_new;
        if rel < cfg.tol {
            break;
        }
    }
    Ok(IstaOutcome {
        chi,
        objective: history,
        lipschitz,
        beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BimConfig {
    pub ista: IstaConfig,
    pub outer_max: usize,
    pub backend: SolverBackend,
}

impl Default for BimConfig {
    fn default() -> Self {
        BimConfig {
            ista: IstaConfig::default(),
            outer_max: 10,
            backend: SolverBackend::default(),
        }
    }
}

/// Snapshot of one outer BIM iteration.
#[derive(Debug, Clone)]
pub struct BimState {
    pub p: usize,
    pub chi_p: ContrastMap,
    pub etot_p: FieldSet,
    pub data_residual: f64,
}

#[derive(Debug, Clone)]
pub struct BimOutcome {
    pub chi: ContrastMap,
    /// `‖E_sca_mea - G_(p) χ‖`: entry 0 is the zero starting contrast, then one per outer iteration.
    pub residual_history: Vec<f64>,
    pub states: Vec<BimState>,
}

/// Born iterative method: alternate the field update (a forward solve with the
/// current contrast; the incident field at the first iteration) and an ISTA
/// solve of the stacked linearized data equation.
pub fn bim_reconstruct(escamea: &FieldSet, ops: &GreensOperators, einc: &FieldSet, cfg: &BimConfig) -> Result<BimOutcome> {
    if cfg.outer_max == 0 {
        return Err(Error::InvalidArgument("BIM needs at least one outer iteration".into()));
    }
    let grid = *ops.grid();
    if escamea.n_tx() != einc.n_tx() || escamea.n_points() != ops.gm().nrows() || einc.n_points() != grid.len() {
        return Err(Error::ShapeMismatch("BIM inputs do not match the operators".into()));
    }
    let y: Vec<Complex64> = escamea.values.iter().copied().collect();
    let y_norm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut chi = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut history = vec![y_norm];
    let mut states = Vec::with_capacity(cfg.outer_max);
    let mut field = einc.values.clone();
    for p in 0..cfg.outer_max {
        if p > 0 {
            let map = ContrastMap::from_vec(grid, chi.clone())?;
            field = solve_total_field_with(ops, &map, einc, cfg.backend)?.total.values;
        }
        let op = BornOperator::new(ops.gm(), &field)?;
        let outcome = ista_solve(&op, &y, &cfg.ista, &chi)?;
        chi = outcome.chi;
        let fit = op.apply(&chi);
        let residual = fit
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        history.push(residual);
        states.push(BimState {
            p,
            chi_p: ContrastMap::from_vec(grid, chi.clone())?,
            etot_p: FieldSet::new(FieldRole::TotalDoi, field.clone()),
            data_residual: residual,
        });
    }
    Ok(BimOutcome {
        chi: ContrastMap::from_vec(grid, chi)?,
        residual_history: history,
        states,
    })
}
