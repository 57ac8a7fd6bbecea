use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FieldSet;
use crate::error::{Error, Result};

fn circular_gaussian(len: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(s * re, s * im)
        })
        .collect()
}

fn check_signal(fields: &FieldSet) -> Result<f64> {
    let power = fields.frobenius_sqr();
    if power == 0.0 || !power.is_finite() {
        return Err(Error::Undefined("SNR of an all-zero (or non-finite) field".into()));
    }
    Ok(power)
}

/// Adds circular complex Gaussian noise rescaled so the realized SNR over the
/// whole matrix equals `snr_db` exactly. `snr_db = +inf` returns the input.
pub fn add_awgn(fields: &FieldSet, snr_db: f64, seed: u64) -> Result<FieldSet> {
    if snr_db == f64::INFINITY {
        return Ok(fields.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("SNR is NaN".into()));
    }
    let signal = check_signal(fields)?;
    let noise = circular_gaussian(fields.values.len(), seed);
    let drawn: f64 = noise.iter().map(|c| c.norm_sqr()).sum();
    let target = signal * 10f64.powf(-snr_db / 10.0);
    let scale = (target / drawn).sqrt();
    let mut out = fields.clone();
    for (v, n) in out.values.iter_mut().zip(noise) {
        *v += n * scale;
    }
    Ok(out)
}

/// Adds noise with the *expected* power for `snr_db` (per-entry variance
/// `P_signal / (10^(snr/10) · len)`), without rescaling the realization.
/// Returns the noisy field and the noise that was added.
pub fn add_awgn_unscaled(fields: &FieldSet, snr_db: f64, seed: u64) -> Result<(FieldSet, FieldSet)> {
    let signal = check_signal(fields)?;
    let len = fields.values.len();
    let sigma = (signal * 10f64.powf(-snr_db / 10.0) / len as f64).sqrt();
    let noise = circular_gaussian(len, seed);
    let mut out = fields.clone();
    let mut added = fields.clone();
    for ((v, a), n) in out.values.iter_mut().zip(added.values.iter_mut()).zip(noise) {
        *a = n * sigma;
        *v += *a;
    }
    Ok((out, added))
}

/// `10 log10(‖clean‖² / ‖noisy - clean‖²)`.
pub fn realized_snr_db(clean: &FieldSet, noisy: &FieldSet) -> f64 {
    let signal = clean.frobenius_sqr();
    let noise: f64 = noisy
        .values
        .iter()
        .zip(clean.values.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    10.0 * (signal / noise).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::FieldRole;
    use ndarray::Array2;

    fn field() -> FieldSet {
        FieldSet::new(
            FieldRole::ScatteredMea,
            Array2::from_shape_fn((4, 6), |(i, j)| Complex64::new(i as f64 + 0.5, j as f64 - 2.0)),
        )
    }

    #[test]
    fn infinite_snr_is_identity() {
        let f = field();
        assert_eq!(add_awgn(&f, f64::INFINITY, 3).unwrap(), f);
    }

    #[test]
    fn zero_db_noise_matches_signal_norm() {
        let f = field();
        let noisy = add_awgn(&f, 0.0, 9).unwrap();
        let noise: f64 = (&noisy.values - &f.values).iter().map(|c| c.norm_sqr()).sum();
        assert!((noise.sqrt() - f.frobenius_sqr().sqrt()).abs() < 1e-12);
    }

    #[test]
    fn five_db_power_ratio() {
        let f = field();
        let noisy = add_awgn(&f, 5.0, 1).unwrap();
        let noise: f64 = (&noisy.values - &f.values).iter().map(|c| c.norm_sqr()).sum();
        let ratio = noise / f.frobenius_sqr();
        assert!((ratio - 10f64.powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let f = field();
        assert_eq!(add_awgn(&f, 10.0, 5).unwrap(), add_awgn(&f, 10.0, 5).unwrap());
        assert_ne!(add_awgn(&f, 10.0, 5).unwrap(), add_awgn(&f, 10.0, 6).unwrap());
    }

    #[test]
    fn zero_field_is_rejected() {
        let f = FieldSet::new(FieldRole::ScatteredMea, Array2::zeros((2, 2)));
        assert!(matches!(add_awgn(&f, 5.0, 1), Err(Error::Undefined(_))));
    }
}
