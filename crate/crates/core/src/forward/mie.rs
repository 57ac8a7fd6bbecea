//! Analytic scattering of line-source waves by a homogeneous dielectric cylinder.
//!
//! With the source at `(ρ_t, φ_t)` and the cylinder of radius `R` at the
//! origin, the scattered field outside the cylinder is
//!
//! `E_sca(ρ, φ) = (i/4) Σ_n a_n H_n(k0 ρ_t) H_n(k0 ρ) exp(i n (φ - φ_t))`
//!
//! with `a_n = [k0 J_n'(k0R) J_n(k1R) - k1 J_n'(k1R) J_n(k0R)]
//!           / [k1 J_n'(k1R) H_n(k0R) - k0 J_n(k1R) H_n'(k0R)]`.

use ndarray::Array2;
use num_complex::Complex64;

use super::bessel::{derivative_sequence, hankel1_sequence, j_sequence};
use super::{FieldRole, FieldSet, ScatteringScene};
use crate::error::{Error, Result};

const STOP_RATIO: f64 = 1e-12;
const MAX_ORDER: u32 = 160;

/// Truncated series coefficients for one cylinder.
#[derive(Debug, Clone)]
pub struct MieSeries {
    pub coefficients: Vec<Complex64>,
}

impl MieSeries {
    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }
}

fn coefficients(eps_r: f64, radius: f64, k0: f64, n_max: u32) -> Vec<Complex64> {
    let k1 = k0 * eps_r.sqrt();
    let (x0, x1) = (k0 * radius, k1 * radius);
    let j0 = j_sequence(n_max + 1, x0);
    let j1 = j_sequence(n_max + 1, x1);
    let h0 = hankel1_sequence(n_max + 1, x0);
    let dj0 = derivative_sequence(&j0, x0);
    let dj1 = derivative_sequence(&j1, x1);
    let dh0 = derivative_sequence(&h0, x0);
    (0..=n_max as usize)
        .map(|n| {
            let num = Complex64::new(k0 * dj0[n] * j1[n] - k1 * dj1[n] * j0[n], 0.0);
            let den = h0[n] * (k1 * dj1[n]) - dh0[n] * (k0 * j1[n]);
            num / den
        })
        .collect()
}

struct Polar {
    rho: f64,
    phi: f64,
}

fn polar(p: [f64; 2], c: [f64; 2]) -> Polar {
    let (x, y) = (p[0] - c[0], p[1] - c[1]);
    Polar {
        rho: x.hypot(y),
        phi: y.atan2(x),
    }
}

/// Analytic receiver fields for a cylinder of permittivity `eps_r` centered in the DOI.
pub fn mie_reference(eps_r: f64, radius: f64, scene: &ScatteringScene) -> Result<(FieldSet, MieSeries)> {
    validate(eps_r, radius, scene)?;
    let tx: Vec<Polar> = scene.tx_positions.iter().map(|p| polar(*p, scene.grid.center)).collect();
    let rx: Vec<Polar> = scene.rx_positions.iter().map(|p| polar(*p, scene.grid.center)).collect();
    let k0 = scene.k0;
    let x_min = k0 * radius;

    // Grow the order until the worst-case term magnitude falls below the stop ratio.
    let mut n_try = (x_min * eps_r.sqrt()).ceil() as u32 + 20;
    loop {
        let n_cap = n_try.min(MAX_ORDER);
        let a = coefficients(eps_r, radius, k0, n_cap);
        let mut rhos: Vec<f64> = tx.iter().chain(rx.iter()).map(|p| p.rho).collect();
        rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rhos.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        let hs: Vec<Vec<Complex64>> = rhos.iter().map(|r| hankel1_sequence(n_cap, k0 * r)).collect();
        let mut partial = 0.0;
        let mut stop = None;
        for n in 0..=n_cap as usize {
            let weight = if n == 0 { 1.0 } else { 2.0 };
            let worst = hs
                .iter()
                .flat_map(|ht| hs.iter().map(move |hr| (ht[n] * hr[n]).norm()))
                .fold(0.0, f64::max)
                * a[n].norm()
                * weight;
            if !worst.is_finite() {
                break;
            }
            partial += worst;
            if n as f64 > x_min * eps_r.sqrt() && worst <= STOP_RATIO * partial {
                stop = Some(n);
                break;
            }
        }
        match stop {
            Some(n) => return mie_reference_with_order(eps_r, radius, scene, n as u32),
            None if n_cap < MAX_ORDER => n_try = (n_try * 2).min(MAX_ORDER),
            None => {
                return Err(Error::Domain(format!(
                    "cylinder series did not converge by order {MAX_ORDER} (eps_r = {eps_r}, radius = {radius})"
                )))
            }
        }
    }
}

/// Series truncated at a fixed order `n_max`.
pub fn mie_reference_with_order(
    eps_r: f64,
    radius: f64,
    scene: &ScatteringScene,
    n_max: u32,
) -> Result<(FieldSet, MieSeries)> {
    validate(eps_r, radius, scene)?;
    let k0 = scene.k0;
    let a = coefficients(eps_r, radius, k0, n_max);
    let tx: Vec<Polar> = scene.tx_positions.iter().map(|p| polar(*p, scene.grid.center)).collect();
    let rx: Vec<Polar> = scene.rx_positions.iter().map(|p| polar(*p, scene.grid.center)).collect();
    let ht: Vec<Vec<Complex64>> = tx.iter().map(|p| hankel1_sequence(n_max, k0 * p.rho)).collect();
    let hr: Vec<Vec<Complex64>> = rx.iter().map(|p| hankel1_sequence(n_max, k0 * p.rho)).collect();
    let quarter_i = Complex64::new(0.0, 0.25);
    let mut values = Array2::zeros((tx.len(), rx.len()));
    for (v, t) in tx.iter().enumerate() {
        for (r, q) in rx.iter().enumerate() {
            let dphi = q.phi - t.phi;
            let mut sum = a[0] * ht[v][0] * hr[r][0];
            for n in 1..=n_max as usize {
                sum += a[n] * ht[v][n] * hr[r][n] * (2.0 * (n as f64 * dphi).cos());
            }
            values[[v, r]] = quarter_i * sum;
        }
    }
    if values.iter().any(|c: &Complex64| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Domain(format!("cylinder series overflowed at order {n_max}")));
    }
    Ok((
        FieldSet::new(FieldRole::ScatteredMea, values),
        MieSeries { coefficients: a },
    ))
}

fn validate(eps_r: f64, radius: f64, scene: &ScatteringScene) -> Result<()> {
    if !(eps_r >= 1.0 && eps_r.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps_r must be >= 1, got {eps_r}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    let c = scene.grid.center;
    let min_rho = scene
        .tx_positions
        .iter()
        .chain(scene.rx_positions.iter())
        .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]))
        .fold(f64::INFINITY, f64::min);
    if min_rho <= radius {
        return Err(Error::InvalidArgument(
            "antennas must lie outside the cylinder".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_cylinder_scatters_nothing() {
        let scene = ScatteringScene::desk_default();
        let (f, _) = mie_reference(1.0, 0.5 * scene.grid.lambda0, &scene).unwrap();
        assert!(f.values.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn truncation_is_converged() {
        let scene = ScatteringScene::desk_default();
        let r = 0.5 * scene.grid.lambda0;
        let (f, series) = mie_reference(2.0, r, &scene).unwrap();
        let (g, _) = mie_reference_with_order(2.0, r, &scene, series.order() as u32 + 5).unwrap();
        let diff = (&f.values - &g.values).iter().map(|c| c.norm()).fold(0.0, f64::max);
        let scale = f.values.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(diff / scale < 1e-10, "{}", diff / scale);
    }

    #[test]
    fn rejects_bad_inputs() {
        let scene = ScatteringScene::desk_default();
        assert!(mie_reference(0.5, 0.01, &scene).is_err());
        assert!(mie_reference(2.0, 0.0, &scene).is_err());
        assert!(mie_reference(2.0, 10.0, &scene).is_err());
    }
}
