use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// LU factorization with partial pivoting, stored in place.
#[derive(Debug, Clone)]
pub struct ComplexLu {
    lu: Array2<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    pub fn factor(mut a: Array2<Complex64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch(format!("LU needs a square matrix, got {:?}", a.dim())));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let data = a
            .as_slice_mut()
            .expect("freshly owned matrix is contiguous");
        for k in 0..n {
            let (piv, piv_abs) = (k..n)
                .map(|r| (r, data[r * n + k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_abs == 0.0 || !piv_abs.is_finite() {
                return Err(Error::Domain(format!("singular matrix at column {k}")));
            }
            if piv != k {
                for c in 0..n {
                    data.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
            }
            let inv = 1.0 / data[k * n + k];
            let (head, tail) = data.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n..(k + 1) * n];
            for row in tail.chunks_exact_mut(n) {
                let f = row[k] * inv;
                row[k] = f;
                if f.norm_sqr() == 0.0 {
                    continue;
                }
                for (x, p) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                    *x -= f * p;
                }
            }
        }
        Ok(ComplexLu { lu: a, perm })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.perm.len();
        let lu = self.lu.as_slice().expect("contiguous");
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &lu[i * n..i * n + i];
            let s: Complex64 = row.iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &lu[i * n + i + 1..(i + 1) * n];
            let s: Complex64 = row.iter().zip(&x[i + 1..]).map(|(u, v)| u * v).sum();
            x[i] = (x[i] - s) / lu[i * n + i];
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    /// Relative residual target `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Unpreconditioned BiCGSTAB for a complex operator.
///
/// Restarts from the current iterate on breakdown or when the recursively
/// updated residual drifts from the true one; convergence is always declared
/// on the true residual.
pub fn bicgstab<F>(apply: &F, b: &[Complex64], x0: &[Complex64], cfg: &KrylovConfig) -> Result<(Vec<Complex64>, KrylovStats)>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((
            vec![Complex64::new(0.0, 0.0); n],
            KrylovStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut x = x0.to_vec();
    let mut iterations = 0;
    let mut best = f64::INFINITY;
    let zero = Complex64::new(0.0, 0.0);

    'restart: while iterations < cfg.max_iter {
        let ax = apply(&x);
        let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let true_rel = norm(&r) / b_norm;
        best = best.min(true_rel);
        if true_rel <= cfg.tol {
            return Ok((
                x,
                KrylovStats {
                    iterations,
                    relative_residual: true_rel,
                },
            ));
        }
        let r_hat = r.clone();
        let mut rho = Complex64::new(1.0, 0.0);
        let mut alpha = Complex64::new(1.0, 0.0);
        let mut omega = Complex64::new(1.0, 0.0);
        let mut v = vec![zero; n];
        let mut p = vec![zero; n];

        while iterations < cfg.max_iter {
            iterations += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new.norm() < 1e-300 || omega.norm() < 1e-300 {
                continue 'restart;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            v = apply(&p);
            let denom = dot(&r_hat, &v);
            if denom.norm() < 1e-300 {
                continue 'restart;
            }
            alpha = rho / denom;
            let s: Vec<Complex64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
            if norm(&s) / b_norm <= 0.1 * cfg.tol {
                for i in 0..n {
                    x[i] += alpha * p[i];
                }
                continue 'restart;
            }
            let t = apply(&s);
            let tt = dot(&t, &t);
            if tt.norm() < 1e-300 {
                continue 'restart;
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * p[i] + omega * s[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm(&r) / b_norm <= 0.1 * cfg.tol {
                continue 'restart;
            }
        }
    }

    let ax = apply(&x);
    let rel = norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / b_norm;
    if rel <= cfg.tol {
        return Ok((
            x,
            KrylovStats {
                iterations,
                relative_residual: rel,
            },
        ));
    }
    Err(Error::Convergence {
        iterations,
        residual: rel.min(best),
    })
}
