//! Cylindrical Bessel and Hankel functions of integer order and real argument.
//!
//! Orders 0 and 1 use the ascending power series below `ASYMPTOTIC_SWITCH`
//! and the Hankel asymptotic expansion above it. Higher orders come from
//! recurrences: Miller's backward recurrence (normalized by the Neumann sum
//! `J0 + 2 Σ J_2k = 1`) for `J`, and forward recurrence for `Y`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const ASYMPTOTIC_SWITCH: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselKind {
    /// Bessel function of the first kind.
    J,
    /// Bessel function of the second kind (Neumann).
    Y,
    /// Hankel function of the first kind, `J + iY`.
    H1,
}

/// Evaluates `kind` of integer `order` at `x`.
///
/// `J` accepts any real `x` (odd orders are odd in `x`); `Y` and `H1` need `x > 0`.
pub fn cyl_bessel(order: u32, kind: BesselKind, x: f64) -> Result<Complex64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("non-finite argument {x}")));
    }
    match kind {
        BesselKind::J => Ok(Complex64::new(jn(order, x), 0.0)),
        BesselKind::Y => {
            check_positive(x)?;
            Ok(Complex64::new(yn(order, x), 0.0))
        }
        BesselKind::H1 => {
            check_positive(x)?;
            Ok(Complex64::new(jn(order, x), yn(order, x)))
        }
    }
}

fn check_positive(x: f64) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "second-kind Bessel functions need x > 0, got {x}"
        )))
    }
}

pub fn j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < ASYMPTOTIC_SWITCH {
        series_j(0, ax)
    } else {
        asymptotic(0, ax).0
    }
}

pub fn j1(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < ASYMPTOTIC_SWITCH {
        series_j(1, ax)
    } else {
        asymptotic(1, ax).0
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// `Y0(x)` for `x > 0`; returns NaN otherwise.
pub fn y0(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NAN;
    }
    if x < ASYMPTOTIC_SWITCH {
        series_y0(x)
    } else {
        asymptotic(0, x).1
    }
}

/// `Y1(x)` for `x > 0`; returns NaN otherwise.
pub fn y1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NAN;
    }
    if x < ASYMPTOTIC_SWITCH {
        series_y1(x)
    } else {
        asymptotic(1, x).1
    }
}

pub fn hankel1_0(x: f64) -> Complex64 {
    Complex64::new(j0(x), y0(x))
}

pub fn hankel1_1(x: f64) -> Complex64 {
    Complex64::new(j1(x), y1(x))
}

pub fn jn(order: u32, x: f64) -> f64 {
    match order {
        0 => j0(x),
        1 => j1(x),
        n => {
            let v = j_sequence(n, x.abs())[n as usize];
            if x < 0.0 && n % 2 == 1 {
                -v
            } else {
                v
            }
        }
    }
}

pub fn yn(order: u32, x: f64) -> f64 {
    match order {
        0 => y0(x),
        1 => y1(x),
        n => {
            if x <= 0.0 {
                return f64::NAN;
            }
            y_sequence(n, x)[n as usize]
        }
    }
}

/// `J_0(x) ..= J_{n_max}(x)` for `x >= 0`.
pub fn j_sequence(n_max: u32, x: f64) -> Vec<f64> {
    let n_max = n_max as usize;
    let mut out = vec![0.0; n_max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let top = n_max.max(x.ceil() as usize);
    // Start comfortably above both the requested order and the turning point.
    let mut start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    start += start % 2;
    let two_over_x = 2.0 / x;
    let mut next = 0.0_f64;
    let mut cur = 1e-300_f64;
    let mut even_sum = 0.0_f64;
    for k in (1..=start).rev() {
        // cur holds J_k (unnormalized), next holds J_{k+1}.
        let prev = k as f64 * two_over_x * cur - next;
        next = cur;
        cur = prev;
        let idx = k - 1;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            even_sum *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
        if idx <= n_max {
            out[idx] = cur;
        }
        if idx % 2 == 0 && idx > 0 {
            even_sum += cur;
        }
    }
    let norm = cur + 2.0 * even_sum;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `Y_0(x) ..= Y_{n_max}(x)` for `x > 0` by forward recurrence.
pub fn y_sequence(n_max: u32, x: f64) -> Vec<f64> {
    let n_max = n_max as usize;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(y0(x));
    if n_max >= 1 {
        out.push(y1(x));
    }
    for k in 1..n_max {
        let v = 2.0 * k as f64 / x * out[k] - out[k - 1];
        out.push(v);
    }
    out
}

/// `H^(1)_0(x) ..= H^(1)_{n_max}(x)` for `x > 0`.
pub fn hankel1_sequence(n_max: u32, x: f64) -> Vec<Complex64> {
    let j = j_sequence(n_max, x);
    let y = y_sequence(n_max, x);
    j.into_iter()
        .zip(y)
        .map(|(re, im)| Complex64::new(re, im))
        .collect()
}

/// Derivatives `Z_n'(x)` from a sequence `Z_0..=Z_{N}` via
/// `Z_n' = Z_{n-1} - (n/x) Z_n` and `Z_0' = -Z_1`. The last entry is dropped.
pub fn derivative_sequence<T>(values: &[T], x: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Neg<Output = T>,
{
    let n = values.len();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return out;
    }
    out.push(-values[1]);
    for k in 1..n - 1 {
        out.push(values[k - 1] - values[k] * (k as f64 / x));
    }
    out
}

fn series_j(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    let mut term = if order == 0 { 1.0 } else { half };
    let mut sum = term;
    for k in 1..200 {
        term *= q / (k as f64 * (k + order as usize) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn series_y0(x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    // Σ_{k>=1} (-1)^{k+1} H_k q^k / (k!)^2
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        harmonic += 1.0 / kf;
        let add = -term * harmonic;
        sum += add;
        if add.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    (2.0 / PI) * ((half.ln() + EULER_GAMMA) * series_j(0, x) + sum)
}

fn series_y1(x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    // Σ_{k>=0} (-1)^k (H_k + H_{k+1} - 2γ)... expressed with ψ(k+1) + ψ(k+2).
    let mut term = half;
    let mut hk = 0.0;
    let mut hk1 = 1.0;
    let mut sum = term * (hk + hk1);
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + 1.0));
        hk += 1.0 / kf;
        hk1 += 1.0 / (kf + 1.0);
        let add = term * (hk + hk1);
        sum += add;
        if add.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    let j1v = series_j(1, x);
    // ψ(k+1)+ψ(k+2) = H_k + H_{k+1} - 2γ; the -2γ part sums to -2γ J1.
    (2.0 / PI) * half.ln() * j1v - 2.0 / (PI * x) - (1.0 / PI) * (sum - 2.0 * EULER_GAMMA * j1v)
}

/// Hankel asymptotic expansion; returns `(J_order(x), Y_order(x))`.
fn asymptotic(order: u32, x: f64) -> (f64, f64) {
    let mu = 4.0 * (order as f64).powi(2);
    let eight_x = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0_f64;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) / (k as f64 * eight_x);
        if term.abs() > last || term == 0.0 {
            break;
        }
        last = term.abs();
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    let omega = x - (order as f64) * FRAC_PI_2 - FRAC_PI_4;
    let amp = (2.0 / (PI * x)).sqrt();
    let (s, c) = omega.sin_cos();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}
