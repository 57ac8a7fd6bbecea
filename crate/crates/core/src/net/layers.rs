//! Layer primitives on NCHW tensors, each with an exact backward pass.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n}x{c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[b * l..(b + 1) * l]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let l = self.sample_len();
        &mut self.data[b * l..(b + 1) * l]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.h * self.w;
        let o = (b * self.c + c) * p;
        &self.data[o..o + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let p = self.h * self.w;
        let o = (b * self.c + c) * p;
        &mut self.data[o..o + p]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Stride-1 convolution with "same" zero padding (odd kernel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    /// `[c_out][c_in][k][k]`.
    pub weight: Vec<f64>,
    /// Empty when the convolution feeds a batch norm.
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn fan_in(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    /// Blends batch statistics into the running estimates.
    pub fn absorb(&mut self, cache: &BnCache) {
        for c in 0..self.gamma.len() {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * cache.mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * cache.unbiased_var[c];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Array2<f64> {
    let p = k / 2;
    let hw = h * w;
    let mut col = Array2::zeros((c * k * k, hw));
    let data = col.as_slice_mut().expect("fresh array is contiguous");
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut data[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < p || sy - p >= h {
                        continue;
                    }
                    let srow = &src[(sy - p) * w..(sy - p + 1) * w];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    let lo = p.saturating_sub(kx);
                    let hi = (w + p).saturating_sub(kx).min(w);
                    for x in lo..hi {
                        drow[x] = srow[x + kx - p];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &Array2<f64>, c: usize, h: usize, w: usize, k: usize, out: &mut [f64]) {
    let p = k / 2;
    let hw = h * w;
    let data = col.as_slice().expect("contiguous");
    for ci in 0..c {
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &data[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < p || sy - p >= h {
                        continue;
                    }
                    let drow = &mut dst[(sy - p) * w..(sy - p + 1) * w];
                    let srow = &src[y * w..(y + 1) * w];
                    let lo = p.saturating_sub(kx);
                    let hi = (w + p).saturating_sub(kx).min(w);
                    for x in lo..hi {
                        drow[x + kx - p] += srow[x];
                    }
                }
            }
        }
    }
}

fn check_conv(x: &Tensor, conv: &Conv) -> Result<()> {
    if x.c != conv.c_in || conv.weight.len() != conv.c_out * conv.fan_in() || conv.k.is_multiple_of(2) {
        return Err(Error::ShapeMismatch(format!(
            "conv {}->{} (k={}) applied to {} channels",
            conv.c_in, conv.c_out, conv.k, x.c
        )));
    }
    Ok(())
}

pub fn conv_forward(x: &Tensor, conv: &Conv) -> Result<Tensor> {
    check_conv(x, conv)?;
    let wmat = ArrayView2::from_shape((conv.c_out, conv.fan_in()), &conv.weight)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let mut out = Tensor::zeros(x.n, conv.c_out, x.h, x.w);
    let hw = x.h * x.w;
    for b in 0..x.n {
        let y = if conv.k == 1 {
            let xv = ArrayView2::from_shape((x.c, hw), x.sample(b)).expect("sample shape");
            wmat.dot(&xv)
        } else {
            wmat.dot(&im2col(x.sample(b), x.c, x.h, x.w, conv.k))
        };
        let dst = out.sample_mut(b);
        dst.copy_from_slice(y.as_slice().expect("dot output is contiguous"));
        if !conv.bias.is_empty() {
            for (co, bias) in conv.bias.iter().enumerate() {
                dst[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dweight: Vec<f64>,
    pub dbias: Vec<f64>,
}

/// Gradients of a convolution given its input and the output gradient.
pub fn conv_backward(x: &Tensor, conv: &Conv, dy: &Tensor, need_dx: bool) -> Result<ConvGrads> {
    check_conv(x, conv)?;
    if dy.shape() != [x.n, conv.c_out, x.h, x.w] {
        return Err(Error::ShapeMismatch("conv output gradient has the wrong shape".into()));
    }
    let hw = x.h * x.w;
    let wmat = ArrayView2::from_shape((conv.c_out, conv.fan_in()), &conv.weight).expect("checked");
    let mut dw = Array2::<f64>::zeros((conv.c_out, conv.fan_in()));
    let mut dbias = vec![0.0; conv.bias.len()];
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
    for b in 0..x.n {
        let g = ArrayView2::from_shape((conv.c_out, hw), dy.sample(b)).expect("checked");
        let col = if conv.k == 1 {
            ArrayView2::from_shape((x.c, hw), x.sample(b)).expect("sample shape").to_owned()
        } else {
            im2col(x.sample(b), x.c, x.h, x.w, conv.k)
        };
        dw += &g.dot(&col.t());
        for (co, db) in dbias.iter_mut().enumerate() {
            *db += g.row(co).sum();
        }
        if let Some(dx) = dx.as_mut() {
            let dcol = wmat.t().dot(&g);
            let dcol = dcol.as_standard_layout().into_owned();
            if conv.k == 1 {
                dx.sample_mut(b).copy_from_slice(dcol.as_slice().expect("standard layout"));
            } else {
                col2im(&dcol, x.c, x.h, x.w, conv.k, dx.sample_mut(b));
            }
        }
    }
    Ok(ConvGrads {
        dx,
        dweight: dw.into_raw_vec_and_offset().0,
        dbias,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mode: Mode,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

pub fn bn_forward(x: &Tensor, bn: &BatchNorm, mode: Mode) -> Result<(Tensor, BnCache)> {
    if bn.gamma.len() != x.c {
        return Err(Error::ShapeMismatch(format!("batch norm over {} channels got {}", bn.gamma.len(), x.c)));
    }
    let m = (x.n * x.h * x.w) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    match mode {
        Mode::Train => {
            for c in 0..x.c {
                let s: f64 = (0..x.n).map(|b| x.plane(b, c).iter().sum::<f64>()).sum();
                mean[c] = s / m;
                let v: f64 = (0..x.n)
                    .map(|b| x.plane(b, c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>())
                    .sum();
                var[c] = v / m;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(&bn.running_mean);
            var.copy_from_slice(&bn.running_var);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut xhat = vec![0.0; x.data.len()];
    let p = x.h * x.w;
    for b in 0..x.n {
        for c in 0..x.c {
            let o = (b * x.c + c) * p;
            for i in o..o + p {
                let xh = (x.data[i] - mean[c]) * inv_std[c];
                xhat[i] = xh;
                y.data[i] = bn.gamma[c] * xh + bn.beta[c];
            }
        }
    }
    let unbiased_var = if m > 1.0 { var.iter().map(|v| v * m / (m - 1.0)).collect() } else { var };
    Ok((
        y,
        BnCache {
            mode,
            xhat,
            inv_std,
            mean,
            unbiased_var,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward(dy: &Tensor, bn: &BatchNorm, cache: &BnCache) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (n, ch, p) = (dy.n, dy.c, dy.h * dy.w);
    let m = (n * p) as f64;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for b in 0..n {
        for c in 0..ch {
            let o = (b * ch + c) * p;
            for i in o..o + p {
                dgamma[c] += dy.data[i] * cache.xhat[i];
                dbeta[c] += dy.data[i];
            }
        }
    }
    let mut dx = Tensor::zeros(n, ch, dy.h, dy.w);
    for b in 0..n {
        for c in 0..ch {
            let o = (b * ch + c) * p;
            let g = bn.gamma[c] * cache.inv_std[c];
            for i in o..o + p {
                dx.data[i] = match cache.mode {
                    // Σ dxhat = γ dβ and Σ dxhat·xhat = γ dγ.
                    Mode::Train => g * (dy.data[i] - (dbeta[c] + cache.xhat[i] * dgamma[c]) / m),
                    Mode::Eval => g * dy.data[i],
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Routes the gradient through units whose output is positive.
pub fn relu_backward(dy: &Tensor, y: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, v) in dx.data.iter_mut().zip(&y.data) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// 2x2 max pooling; returns the flat input index chosen for every output.
pub fn maxpool_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if !x.h.is_multiple_of(2) || !x.w.is_multiple_of(2) {
        return Err(Error::ShapeMismatch(format!("cannot pool a {}x{} map", x.h, x.w)));
    }
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0; y.data.len()];
    let mut o = 0;
    for b in 0..x.n {
        for c in 0..x.c {
            let base = (b * x.c + c) * x.h * x.w;
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * yy * x.w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * yy + dy) * x.w + 2 * xx + dx;
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                    y.data[o] = x.data[best];
                    arg[o] = best;
                    o += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool_backward(dy: &Tensor, arg: &[usize], input_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (g, &i) in dy.data.iter().zip(arg) {
        dx.data[i] += g;
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_forward(x: &Tensor) -> Tensor {
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    for b in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(b, c);
            let dst = y.plane_mut(b, c);
            for yy in 0..h2 {
                for xx in 0..w2 {
                    dst[yy * w2 + xx] = src[(yy / 2) * x.w + xx / 2];
                }
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for b in 0..dy.n {
        for c in 0..dy.c {
            let src = dy.plane(b, c);
            let dst = dx.plane_mut(b, c);
            for yy in 0..dy.h {
                for xx in 0..dy.w {
                    dst[(yy / 2) * w + xx / 2] += src[yy * dy.w + xx];
                }
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::ShapeMismatch(format!("concat {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut y = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    let (la, lb) = (a.c * a.h * a.w, b.c * b.h * b.w);
    for s in 0..a.n {
        let dst = y.sample_mut(s);
        dst[..la].copy_from_slice(a.sample(s));
        dst[la..la + lb].copy_from_slice(b.sample(s));
    }
    Ok(y)
}

/// Splits a concatenated gradient back into its `c_a` and remaining channels.
pub fn concat_backward(dy: &Tensor, c_a: usize) -> (Tensor, Tensor) {
    let c_b = dy.c - c_a;
    let mut da = Tensor::zeros(dy.n, c_a, dy.h, dy.w);
    let mut db = Tensor::zeros(dy.n, c_b, dy.h, dy.w);
    let la = c_a * dy.h * dy.w;
    for s in 0..dy.n {
        let src = dy.sample(s);
        da.sample_mut(s).copy_from_slice(&src[..la]);
        db.sample_mut(s).copy_from_slice(&src[la..]);
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        let (c, h, w, k) = (2, 5, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let col = im2col(&x, c, h, w, k);
        let r = Array2::from_shape_fn(col.dim(), |(i, j)| ((i * 7 + j) as f64 * 0.13).cos());
        let lhs: f64 = (&col * &r).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&r, c, h, w, k, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = Tensor::from_vec(1, 1, 3, 3, (0..9).map(|v| v as f64).collect()).unwrap();
        let mut weight = vec![0.0; 9];
        weight[4] = 1.0;
        let conv = Conv {
            c_in: 1,
            c_out: 1,
            k: 3,
            weight,
            bias: vec![0.5],
        };
        let y = conv_forward(&x, &conv).unwrap();
        assert!(y.data.iter().zip(&x.data).all(|(a, b)| *a == b + 0.5));
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let (y, arg) = maxpool_forward(&x).unwrap();
        assert_eq!(y.data, vec![4.0]);
        assert_eq!(arg, vec![1]);
        let up = upsample_forward(&y);
        assert_eq!(up.data, vec![4.0; 4]);
        assert_eq!(upsample_backward(&up).data, vec![16.0]);
    }

    #[test]
    fn relu_dead_unit_blocks_gradient() {
        let x = Tensor::from_vec(1, 1, 1, 2, vec![-1.0, 2.0]).unwrap();
        let y = relu_forward(&x);
        let dy = Tensor::from_vec(1, 1, 1, 2, vec![5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&dy, &y).data, vec![0.0, 5.0]);
    }
}
