//! Forward scattering for TM illumination of a 2D dielectric profile.
//!
//! Time convention is `exp(-iωt)`; the free-space Green's function is
//! `g(ρ) = (i/4) H0^(1)(k0 ρ)` and line sources have unit strength, so the
//! incident field of transmitter `v` is `g(|r - r_v|)`.

pub mod bessel;
mod greens;
mod mie;
mod noise;
mod solver;

use std::f64::consts::PI;

use ndarray::{Array2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ContrastMap, GridSpec};

pub use greens::GreensOperators;
pub use mie::{mie_reference, mie_reference_with_order, MieSeries};
pub use noise::{add_awgn, add_awgn_unscaled, realized_snr_db};
pub use solver::{bicgstab, ComplexLu, KrylovConfig, KrylovStats};

/// Measurement geometry and illumination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringScene {
    pub grid: GridSpec,
    /// Background wavenumber in rad/m.
    pub k0: f64,
    pub tx_positions: Vec<[f64; 2]>,
    pub rx_positions: Vec<[f64; 2]>,
}

impl ScatteringScene {
    pub fn new(grid: GridSpec, tx_positions: Vec<[f64; 2]>, rx_positions: Vec<[f64; 2]>) -> Result<Self> {
        if tx_positions.is_empty() || rx_positions.is_empty() {
            return Err(Error::InvalidArgument(
                "scene needs at least one transmitter and one receiver".into(),
            ));
        }
        for p in tx_positions.iter().chain(rx_positions.iter()) {
            if !p.iter().all(|c| c.is_finite()) || grid.contains(*p) {
                return Err(Error::InvalidArgument(format!(
                    "antenna at ({:.4}, {:.4}) is not strictly outside the DOI",
                    p[0], p[1]
                )));
            }
        }
        Ok(ScatteringScene {
            k0: grid.k0(),
            grid,
            tx_positions,
            rx_positions,
        })
    }

    /// Transmitters and receivers uniformly spaced on a circle around the DOI center.
    pub fn circular(grid: GridSpec, n_tx: usize, n_rx: usize, radius: f64) -> Result<Self> {
        let ring = |n: usize| -> Vec<[f64; 2]> {
            (0..n)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / n as f64;
                    [grid.center[0] + radius * t.cos(), grid.center[1] + radius * t.sin()]
                })
                .collect()
        };
        ScatteringScene::new(grid, ring(n_tx), ring(n_rx))
    }

    /// 32x32 over 2 wavelengths, 16 antennas on a 4-wavelength circle.
    pub fn desk_default() -> Self {
        let grid = GridSpec::desk_scale();
        ScatteringScene::circular(grid, 16, 16, 4.0 * grid.lambda0).expect("valid preset")
    }

    /// 64x64 over 5.6 wavelengths, 36 antennas on a 10-wavelength circle.
    pub fn full_scale_default() -> Self {
        let grid = GridSpec::full_scale();
        ScatteringScene::circular(grid, 36, 36, 10.0 * grid.lambda0).expect("valid preset")
    }

    pub fn n_tx(&self) -> usize {
        self.tx_positions.len()
    }

    pub fn n_rx(&self) -> usize {
        self.rx_positions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldRole {
    IncidentDoi,
    TotalDoi,
    Current,
    ScatteredDoi,
    ScatteredMea,
}

impl FieldRole {
    pub fn on_receivers(self) -> bool {
        matches!(self, FieldRole::ScatteredMea)
    }
}

/// Per-transmitter complex fields, `values[[v, point]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub role: FieldRole,
    pub values: Array2<Complex64>,
}

impl FieldSet {
    pub fn new(role: FieldRole, values: Array2<Complex64>) -> Self {
        FieldSet { role, values }
    }

    pub fn n_tx(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Checks the matrix shape against a scene for this role.
    pub fn check_against(&self, scene: &ScatteringScene) -> Result<()> {
        let cols = if self.role.on_receivers() {
            scene.n_rx()
        } else {
            scene.grid.len()
        };
        if self.values.dim() != (scene.n_tx(), cols) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} field is {:?}, scene expects ({}, {cols})",
                self.role,
                self.values.dim(),
                scene.n_tx()
            )));
        }
        Ok(())
    }
}

/// Cylindrical waves of the unit line sources sampled at the pixel centers.
pub fn incident_field(scene: &ScatteringScene) -> Result<FieldSet> {
    let centers = scene.grid.pixel_centers();
    let mut values = Array2::zeros((scene.n_tx(), centers.len()));
    for (v, tx) in scene.tx_positions.iter().enumerate() {
        for (n, p) in centers.iter().enumerate() {
            let rho = (p[0] - tx[0]).hypot(p[1] - tx[1]);
            if rho <= 1e-12 * scene.grid.lambda0 {
                return Err(Error::Singularity(format!(
                    "transmitter {v} sits on pixel {n}"
                )));
            }
            values[[v, n]] = line_source_field(scene.k0 * rho);
        }
    }
    Ok(FieldSet::new(FieldRole::IncidentDoi, values))
}

/// `(i/4) H0^(1)(k0 ρ)`, given `k0 ρ`.
pub fn line_source_field(k0_rho: f64) -> Complex64 {
    Complex64::new(0.0, 0.25) * bessel::hankel1_0(k0_rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverBackend {
    /// Dense LU of `I - GD diag(chi)`.
    DenseLu,
    /// Matrix-free BiCGSTAB with the FFT Green's kernel.
    Krylov(KrylovConfig),
}

impl Default for SolverBackend {
    fn default() -> Self {
        SolverBackend::Krylov(KrylovConfig::default())
    }
}

/// Total field and induced current inside the DOI.
#[derive(Debug, Clone)]
pub struct TotalFieldSolution {
    pub total: FieldSet,
    pub current: FieldSet,
    /// Worst relative residual over transmitters.
    pub max_relative_residual: f64,
}

/// Solves `(I - GD diag(chi)) E_tot = E_inc` for every transmitter, then `J = chi ⊙ E_tot`.
pub fn solve_total_field(ops: &GreensOperators, chi: &ContrastMap, einc: &FieldSet) -> Result<TotalFieldSolution> {
    solve_total_field_with(ops, chi, einc, SolverBackend::default())
}

pub fn solve_total_field_with(
    ops: &GreensOperators,
    chi: &ContrastMap,
    einc: &FieldSet,
    backend: SolverBackend,
) -> Result<TotalFieldSolution> {
    let n = ops.grid().len();
    if chi.grid.nx != ops.grid().nx || chi.grid.ny != ops.grid().ny {
        return Err(Error::ShapeMismatch("contrast grid differs from operator grid".into()));
    }
    if einc.n_points() != n {
        return Err(Error::ShapeMismatch(format!(
            "incident field has {} points, grid has {n}",
            einc.n_points()
        )));
    }
    let chi_vec = chi.to_vec();
    let system = |x: &[Complex64]| -> Vec<Complex64> {
        let weighted: Vec<Complex64> = x.iter().zip(&chi_vec).map(|(a, c)| a * c).collect();
        let gx = ops.apply_gd(&weighted);
        x.iter().zip(gx).map(|(a, g)| a - g).collect()
    };

    let rows: Vec<Vec<Complex64>> = einc
        .values
        .axis_iter(Axis(0))
        .map(|r| r.to_vec())
        .collect();

    let solutions: Vec<Vec<Complex64>> = if chi_vec.iter().all(|c| c.norm_sqr() == 0.0) {
        rows.clone()
    } else {
        match backend {
            SolverBackend::DenseLu => {
                let mut a = ops.dense_gd();
                for (mut col, c) in a.axis_iter_mut(Axis(1)).zip(&chi_vec) {
                    col.mapv_inplace(|g| -g * c);
                }
                for k in 0..n {
                    a[[k, k]] += Complex64::new(1.0, 0.0);
                }
                let lu = ComplexLu::factor(a)?;
                rows.par_iter().map(|b| lu.solve(b)).collect()
            }
            SolverBackend::Krylov(cfg) => rows
                .par_iter()
                .map(|b| bicgstab(&system, b, b, &cfg).map(|(x, _)| x))
                .collect::<Result<Vec<_>>>()?,
        }
    };

    let mut total = Array2::zeros((einc.n_tx(), n));
    let mut worst = 0.0_f64;
    for (v, (x, b)) in solutions.iter().zip(&rows).enumerate() {
        let ax = system(x);
        let num: f64 = ax.iter().zip(b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(if den > 0.0 { num / den } else { num });
        total.row_mut(v).assign(&ndarray::ArrayView1::from(x.as_slice()));
    }
    let mut current = total.clone();
    for mut row in current.axis_iter_mut(Axis(0)) {
        Zip::from(&mut row).and(&chi_vec[..]).for_each(|e, c| *e *= c);
    }
    Ok(TotalFieldSolution {
        total: FieldSet::new(FieldRole::TotalDoi, total),
        current: FieldSet::new(FieldRole::Current, current),
        max_relative_residual: worst,
    })
}

/// Data equation: receiver fields radiated by the induced currents.
pub fn scattered_at_receivers(ops: &GreensOperators, current: &FieldSet) -> Result<FieldSet> {
    if current.n_points() != ops.grid().len() {
        return Err(Error::ShapeMismatch(format!(
            "current has {} points, grid has {}",
            current.n_points(),
            ops.grid().len()
        )));
    }
    let values = current.values.dot(&ops.gm().t());
    Ok(FieldSet::new(FieldRole::ScatteredMea, values))
}

/// `E_sca_DOI = E_tot - E_inc`.
pub fn scattered_in_doi(total: &FieldSet, incident: &FieldSet) -> Result<FieldSet> {
    if total.values.dim() != incident.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "total field {:?} vs incident field {:?}",
            total.values.dim(),
            incident.values.dim()
        )));
    }
    Ok(FieldSet::new(FieldRole::ScatteredDoi, &total.values - &incident.values))
}

/// Everything the forward model produces for one contrast map.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub incident: FieldSet,
    pub total: FieldSet,
    pub current: FieldSet,
    pub scattered_doi: FieldSet,
    pub measured: FieldSet,
}

pub fn simulate(ops: &GreensOperators, einc: &FieldSet, chi: &ContrastMap, backend: SolverBackend) -> Result<Simulation> {
    let sol = solve_total_field_with(ops, chi, einc, backend)?;
    let measured = scattered_at_receivers(ops, &sol.current)?;
    let scattered_doi = scattered_in_doi(&sol.total, einc)?;
    Ok(Simulation {
        incident: einc.clone(),
        total: sol.total,
        current: sol.current,
        scattered_doi,
        measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn small_scene() -> ScatteringScene {
        let g = make_grid(8, 8, 0.1, 0.1, 0.075).unwrap();
        ScatteringScene::circular(g, 6, 6, 0.3).unwrap()
    }

    #[test]
    fn antennas_must_be_outside() {
        let g = make_grid(8, 8, 0.1, 0.1, 0.075).unwrap();
        assert!(ScatteringScene::circular(g, 4, 4, 0.04).is_err());
        assert!(ScatteringScene::new(g, vec![[0.05, 0.0]], vec![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn zero_contrast_is_identity() {
        let scene = small_scene();
        let ops = GreensOperators::build(&scene).unwrap();
        let einc = incident_field(&scene).unwrap();
        let chi = ContrastMap::zeros(scene.grid);
        let sol = solve_total_field(&ops, &chi, &einc).unwrap();
        assert_eq!(sol.total.values, einc.values);
        assert!(sol.current.values.iter().all(|c| c.norm() == 0.0));
        let mea = scattered_at_receivers(&ops, &sol.current).unwrap();
        assert!(mea.values.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn shape_errors() {
        let scene = small_scene();
        let a = FieldSet::new(FieldRole::TotalDoi, Array2::zeros((2, 3)));
        let b = FieldSet::new(FieldRole::IncidentDoi, Array2::zeros((2, 4)));
        assert!(matches!(scattered_in_doi(&a, &b), Err(Error::ShapeMismatch(_))));
        assert!(a.check_against(&scene).is_err());
    }

    #[test]
    fn equidistant_pixels_see_equal_incident_field() {
        let g = make_grid(8, 8, 0.1, 0.1, 0.075).unwrap();
        // Source on the x axis: pixels mirrored in y are equidistant.
        let scene = ScatteringScene::new(g, vec![[0.3, 0.0]], vec![[-0.3, 0.0]]).unwrap();
        let e = incident_field(&scene).unwrap();
        for ix in 0..8 {
            let a = e.values[[0, 2 * 8 + ix]];
            let b = e.values[[0, 5 * 8 + ix]];
            assert!((a - b).norm() < 1e-15);
        }
    }
}
