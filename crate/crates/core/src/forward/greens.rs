use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::bessel;
use super::ScatteringScene;
use crate::error::Result;
use crate::grid::GridSpec;

/// Discretized Green's operators for pulse basis / point matching.
///
/// Cells are integrated as equal-area disks of radius `a_eq = sqrt(a/π)`, so
/// with `c = iπ k0 a_eq / 2`:
///
/// * self term: `c H1^(1)(k0 a_eq) - 1`
/// * coupling:  `c J1(k0 a_eq) H0^(1)(k0 ρ)`
///
/// Both already include the `k0²` factor of the integral equation. `GD` is
/// applied through a circulant embedding on a `2ny x 2nx` torus.
pub struct GreensOperators {
    grid: GridSpec,
    k0: f64,
    a_eq: f64,
    self_term: Complex64,
    coupling: Complex64,
    /// `stencil[|dy| * nx + |dx|]` for the DOI-to-DOI operator, self term at 0.
    stencil: Vec<Complex64>,
    gm: Array2<Complex64>,
    /// Kernel spectrum in the transposed (column-major) layout produced by `fft2`.
    kernel_hat: Vec<Complex64>,
    fft_rows: Arc<dyn Fft<f64>>,
    ifft_rows: Arc<dyn Fft<f64>>,
    fft_cols: Arc<dyn Fft<f64>>,
    ifft_cols: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GreensOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreensOperators")
            .field("grid", &self.grid)
            .field("k0", &self.k0)
            .field("a_eq", &self.a_eq)
            .field("self_term", &self.self_term)
            .finish_non_exhaustive()
    }
}

impl GreensOperators {
    pub fn build(scene: &ScatteringScene) -> Result<Self> {
        let grid = scene.grid;
        let k0 = scene.k0;
        let a_eq = (grid.cell_area() / PI).sqrt();
        let x = k0 * a_eq;
        let c = Complex64::new(0.0, 0.5 * PI * x);
        let self_term = c * bessel::hankel1_1(x) - 1.0;
        let coupling = c * bessel::j1(x);

        let (nx, ny) = (grid.nx, grid.ny);
        let (dx, dy) = (grid.dx(), grid.dy());
        let mut stencil = vec![Complex64::new(0.0, 0.0); nx * ny];
        for jy in 0..ny {
            for jx in 0..nx {
                stencil[jy * nx + jx] = if jx == 0 && jy == 0 {
                    self_term
                } else {
                    let rho = (jx as f64 * dx).hypot(jy as f64 * dy);
                    coupling * bessel::hankel1_0(k0 * rho)
                };
            }
        }

        let centers = grid.pixel_centers();
        let gm = Array2::from_shape_fn((scene.n_rx(), centers.len()), |(r, n)| {
            let p = scene.rx_positions[r];
            let q = centers[n];
            coupling * bessel::hankel1_0(k0 * (p[0] - q[0]).hypot(p[1] - q[1]))
        });

        let mut planner = FftPlanner::new();
        let (px, py) = (2 * nx, 2 * ny);
        let fft_rows = planner.plan_fft_forward(px);
        let ifft_rows = planner.plan_fft_inverse(px);
        let fft_cols = planner.plan_fft_forward(py);
        let ifft_cols = planner.plan_fft_inverse(py);

        let mut ops = GreensOperators {
            grid,
            k0,
            a_eq,
            self_term,
            coupling,
            stencil,
            gm,
            kernel_hat: Vec::new(),
            fft_rows,
            ifft_rows,
            fft_cols,
            ifft_cols,
        };

        // Circulant embedding: offset d maps to index d mod 2n; the ±n taps stay zero.
        let mut kernel = vec![Complex64::new(0.0, 0.0); px * py];
        for ky in 0..py {
            let oy = if ky < ny {
                Some(ky)
            } else if ky > ny {
                Some(py - ky)
            } else {
                None
            };
            for kx in 0..px {
                let ox = if kx < nx {
                    Some(kx)
                } else if kx > nx {
                    Some(px - kx)
                } else {
                    None
                };
                if let (Some(oy), Some(ox)) = (oy, ox) {
                    kernel[ky * px + kx] = ops.stencil[oy * nx + ox];
                }
            }
        }
        ops.fft2(&mut kernel);
        ops.kernel_hat = kernel;
        Ok(ops)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    /// Radius of the equal-area disk used for cell integration.
    pub fn equivalent_radius(&self) -> f64 {
        self.a_eq
    }

    pub fn self_term(&self) -> Complex64 {
        self.self_term
    }

    /// Factor multiplying `H0^(1)(k0 ρ)` in every off-diagonal entry.
    pub fn coupling_factor(&self) -> Complex64 {
        self.coupling
    }

    /// DOI-to-receiver operator, `n_rx x N`.
    pub fn gm(&self) -> &Array2<Complex64> {
        &self.gm
    }

    /// Entry `GD[m, n]` for flat pixel indices.
    pub fn gd_entry(&self, m: usize, n: usize) -> Complex64 {
        let nx = self.grid.nx;
        let (my, mx) = (m / nx, m % nx);
        let (ny_, nx_) = (n / nx, n % nx);
        self.stencil[my.abs_diff(ny_) * nx + mx.abs_diff(nx_)]
    }

    /// Dense `N x N` DOI-to-DOI operator.
    pub fn dense_gd(&self) -> Array2<Complex64> {
        let n = self.grid.len();
        Array2::from_shape_fn((n, n), |(m, k)| self.gd_entry(m, k))
    }

    /// `GD x` through the FFT kernel.
    pub fn apply_gd(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        assert_eq!(x.len(), nx * ny, "apply_gd: vector length must match the grid");
        let px = 2 * nx;
        let mut buf = vec![Complex64::new(0.0, 0.0); px * 2 * ny];
        for iy in 0..ny {
            buf[iy * px..iy * px + nx].copy_from_slice(&x[iy * nx..(iy + 1) * nx]);
        }
        self.fft2(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.ifft2(&mut buf);
        let scale = 1.0 / (buf.len() as f64);
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            out.extend(buf[iy * px..iy * px + nx].iter().map(|v| v * scale));
        }
        out
    }

    /// `GDᴴ x`. `GD` is complex symmetric, so this is `conj(GD conj(x))`.
    pub fn apply_gd_adjoint(&self, x: &[Complex64]) -> Vec<Complex64> {
        let conj: Vec<Complex64> = x.iter().map(|c| c.conj()).collect();
        self.apply_gd(&conj).into_iter().map(|c| c.conj()).collect()
    }

    /// Row FFTs, transpose, row FFTs: result is in transposed layout `(2nx, 2ny)`.
    fn fft2(&self, buf: &mut Vec<Complex64>) {
        let (px, py) = (2 * self.grid.nx, 2 * self.grid.ny);
        self.fft_rows.process(buf);
        *buf = transpose(buf, py, px);
        self.fft_cols.process(buf);
    }

    /// Inverse of `fft2` without the `1/len` normalization.
    fn ifft2(&self, buf: &mut Vec<Complex64>) {
        let (px, py) = (2 * self.grid.nx, 2 * self.grid.ny);
        self.ifft_cols.process(buf);
        *buf = transpose(buf, px, py);
        self.ifft_rows.process(buf);
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
