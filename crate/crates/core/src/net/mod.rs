//! A small U-Net with hand-written backpropagation.
//!
//! Encoder level `l` runs two conv3x3 → BN → ReLU units at `base·2^l`
//! channels; levels are separated by 2x2 max pooling. Each decoder level
//! upsamples, applies one conv unit halving the channels, concatenates the
//! matching encoder output and runs two more units. A 1x1 convolution maps to
//! the two output channels `(Re χ̂, Im χ̂)`, optionally added to the input.

pub mod layers;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ContrastMap;
pub use layers::{BatchNorm, Conv, Mode, Tensor};
use layers::{BnCache, *};
pub use train::{
    lr_at_epoch, lr_schedule, predict, train, EpochLog, TrainConfig, TrainLog, TrainState, Trainer,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub use_batchnorm: bool,
    pub input_channels: usize,
    pub output_channels: usize,
    pub kernel: usize,
    /// Adds the input to the head output so the body learns a correction.
    pub residual: bool,
    pub zero_init_head: bool,
    pub rng_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            height: 32,
            width: 32,
            depth: 2,
            base_channels: 8,
            use_batchnorm: true,
            input_channels: 2,
            output_channels: 2,
            kernel: 3,
            residual: true,
            zero_init_head: true,
            rng_seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::InvalidArgument(format!("network sizes must be positive: {self:?}")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel must be odd, got {}", self.kernel)));
        }
        let f = 1usize << self.depth;
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return Err(Error::InvalidArgument(format!(
                "{}x{} input is not divisible by 2^{}",
                self.height, self.width, self.depth
            )));
        }
        if self.residual && self.input_channels != self.output_channels {
            return Err(Error::InvalidArgument("residual output needs equal input and output channels".into()));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(channels, height, width)` at every encoder level, bottleneck last.
    pub fn level_shapes(&self) -> Vec<(usize, usize, usize)> {
        (0..=self.depth)
            .map(|l| (self.channels(l), self.height >> l, self.width >> l))
            .collect()
    }

    fn n_units(&self) -> usize {
        2 * (self.depth + 1) + 3 * self.depth
    }

    fn decoder_unit(&self, level: usize, which: usize) -> usize {
        2 * (self.depth + 1) + 3 * (self.depth - 1 - level) + which
    }
}

/// Convolution optionally followed by batch norm, then ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub conv: Conv,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub config: NetConfig,
    pub units: Vec<Unit>,
    pub head: Conv,
}

/// Gradients aligned with [`NetParams::trainable`].
pub type ParamGrads = Vec<Vec<f64>>;

impl NetParams {
    /// Trainable tensors in a fixed order: per unit `weight, bias, gamma, beta`
    /// (absent ones empty), then the head `weight, bias`.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4 * self.units.len() + 2);
        for u in &self.units {
            out.push(&u.conv.weight);
            out.push(&u.conv.bias);
            match &u.bn {
                Some(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                None => {
                    out.push(&[]);
                    out.push(&[]);
                }
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    /// Visits every trainable tensor with its slot in the [`trainable`](Self::trainable) layout.
    pub fn visit_trainable_mut(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        let mut slot = 0;
        for u in &mut self.units {
            f(slot, &mut u.conv.weight);
            f(slot + 1, &mut u.conv.bias);
            if let Some(bn) = &mut u.bn {
                f(slot + 2, &mut bn.gamma);
                f(slot + 3, &mut bn.beta);
            }
            slot += 4;
        }
        f(slot, &mut self.head.weight);
        f(slot + 1, &mut self.head.bias);
    }

    pub fn zero_grads(&self) -> ParamGrads {
        self.trainable().iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.trainable().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self
                .units
                .iter()
                .filter_map(|u| u.bn.as_ref())
                .all(|bn| bn.running_mean.iter().chain(&bn.running_var).all(|v| v.is_finite()))
    }

    /// Folds the batch statistics of a training-mode forward pass into the running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for (u, c) in self.units.iter_mut().zip(&cache.units) {
            if let (Some(bn), Some(c)) = (u.bn.as_mut(), c.as_ref().and_then(|c| c.bn.as_ref())) {
                bn.absorb(c);
            }
        }
    }
}

/// He-initialized parameters reproducible from `cfg.rng_seed`.
pub fn net_init(cfg: &NetConfig) -> Result<NetParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut conv = |c_in: usize, c_out: usize, k: usize, bias: bool, zero: bool| -> Conv {
        let fan_in = c_in * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weight = (0..c_out * fan_in)
            .map(|_| if zero { 0.0 } else { normal.sample(&mut rng) })
            .collect();
        Conv {
            c_in,
            c_out,
            k,
            weight,
            bias: if bias { vec![0.0; c_out] } else { Vec::new() },
        }
    };
    let bn = cfg.use_batchnorm;
    let mut unit = |c_in: usize, c_out: usize| Unit {
        conv: conv(c_in, c_out, cfg.kernel, !bn, false),
        bn: bn.then(|| BatchNorm::new(c_out)),
    };
    let mut units = Vec::with_capacity(cfg.n_units());
    for l in 0..=cfg.depth {
        let c_in = if l == 0 { cfg.input_channels } else { cfg.channels(l - 1) };
        units.push(unit(c_in, cfg.channels(l)));
        units.push(unit(cfg.channels(l), cfg.channels(l)));
    }
    for l in (0..cfg.depth).rev() {
        let c = cfg.channels(l);
        units.push(unit(2 * c, c));
        units.push(unit(2 * c, c));
        units.push(unit(c, c));
    }
    let head = conv(cfg.channels(0), cfg.output_channels, 1, true, cfg.zero_init_head);
    Ok(NetParams {
        config: *cfg,
        units,
        head,
    })
}

#[derive(Debug, Clone)]
pub struct UnitCache {
    input: Tensor,
    bn: Option<BnCache>,
    output: Tensor,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    units: Vec<Option<UnitCache>>,
    pools: Vec<(Vec<usize>, [usize; 4])>,
    head_input: Tensor,
    input_shape: [usize; 4],
    /// Identifies the parameter set the cache was produced with.
    fingerprint: usize,
}

fn fingerprint(p: &NetParams) -> usize {
    p.units.len() ^ (p.n_parameters() << 8) ^ ((p.config.height * 31 + p.config.width) << 40)
}

fn unit_forward(u: &Unit, x: Tensor, mode: Mode) -> Result<(Tensor, UnitCache)> {
    let z = conv_forward(&x, &u.conv)?;
    let (z, bn) = match &u.bn {
        Some(bn) => {
            let (z, c) = bn_forward(&z, bn, mode)?;
            (z, Some(c))
        }
        None => (z, None),
    };
    let y = relu_forward(&z);
    Ok((
        y.clone(),
        UnitCache {
            input: x,
            bn,
            output: y,
        },
    ))
}

fn unit_backward(u: &Unit, cache: &UnitCache, dy: &Tensor, grads: &mut [Vec<f64>]) -> Result<Tensor> {
    let mut dz = relu_backward(dy, &cache.output);
    if let (Some(bn), Some(bc)) = (&u.bn, &cache.bn) {
        let (dx, dg, db) = bn_backward(&dz, bn, bc);
        add_into(&mut grads[2], &dg);
        add_into(&mut grads[3], &db);
        dz = dx;
    }
    let g = conv_backward(&cache.input, &u.conv, &dz, true)?;
    add_into(&mut grads[0], &g.dweight);
    add_into(&mut grads[1], &g.dbias);
    Ok(g.dx.expect("requested"))
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Forward pass over a `[B, 2, H, W]` batch.
pub fn net_forward(params: &NetParams, input: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
    let cfg = &params.config;
    if input.c != cfg.input_channels || input.h != cfg.height || input.w != cfg.width || input.n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "network expects [B, {}, {}, {}], got {:?}",
            cfg.input_channels,
            cfg.height,
            cfg.width,
            input.shape()
        )));
    }
    let d = cfg.depth;
    let mut units: Vec<Option<UnitCache>> = vec![None; params.units.len()];
    let mut pools = Vec::with_capacity(d);
    let mut skips = Vec::with_capacity(d);
    let mut h = input.clone();
    for l in 0..=d {
        if l > 0 {
            let shape = h.shape();
            let (p, arg) = maxpool_forward(&h)?;
            pools.push((arg, shape));
            h = p;
        }
        for k in [2 * l, 2 * l + 1] {
            let (y, c) = unit_forward(&params.units[k], h, mode)?;
            units[k] = Some(c);
            h = y;
        }
        if l < d {
            skips.push(h.clone());
        }
    }
    for l in (0..d).rev() {
        h = upsample_forward(&h);
        let k = cfg.decoder_unit(l, 0);
        let (y, c) = unit_forward(&params.units[k], h, mode)?;
        units[k] = Some(c);
        h = concat_forward(&skips[l], &y)?;
        for w in [1, 2] {
            let k = cfg.decoder_unit(l, w);
            let (y, c) = unit_forward(&params.units[k], h, mode)?;
            units[k] = Some(c);
            h = y;
        }
    }
    let mut out = conv_forward(&h, &params.head)?;
    if cfg.residual {
        out.add_assign(input);
    }
    Ok((
        out,
        ForwardCache {
            mode,
            units,
            pools,
            head_input: h,
            input_shape: input.shape(),
            fingerprint: fingerprint(params),
        },
    ))
}

/// Parameter gradients and the gradient with respect to the network input.
pub fn net_backward(params: &NetParams, cache: &ForwardCache, d_output: &Tensor) -> Result<(ParamGrads, Tensor)> {
    let cfg = &params.config;
    if cache.fingerprint != fingerprint(params) || cache.units.len() != params.units.len() {
        return Err(Error::InvalidArgument("forward cache does not belong to these parameters".into()));
    }
    let [n, _, h, w] = cache.input_shape;
    if d_output.shape() != [n, cfg.output_channels, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?} does not match the forward output",
            d_output.shape()
        )));
    }
    let d = cfg.depth;
    let mut grads = params.zero_grads();
    let head_slot = 4 * params.units.len();
    let hg = conv_backward(&cache.head_input, &params.head, d_output, true)?;
    grads[head_slot] = hg.dweight;
    grads[head_slot + 1] = hg.dbias;
    let mut dh = hg.dx.expect("requested");

    let cached = |k: usize| cache.units[k].as_ref().ok_or_else(|| Error::InvalidArgument("stale cache".into()));
    let mut dskips: Vec<Option<Tensor>> = vec![None; d];
    for l in 0..d {
        for wch in [2, 1] {
            let k = cfg.decoder_unit(l, wch);
            dh = unit_backward(&params.units[k], cached(k)?, &dh, &mut grads[4 * k..4 * k + 4])?;
        }
        let (dskip, dup) = concat_backward(&dh, cfg.channels(l));
        dskips[l] = Some(dskip);
        let k = cfg.decoder_unit(l, 0);
        dh = unit_backward(&params.units[k], cached(k)?, &dup, &mut grads[4 * k..4 * k + 4])?;
        dh = upsample_backward(&dh);
    }
    for l in (0..=d).rev() {
        if l < d {
            dh.add_assign(dskips[l].as_ref().expect("filled in decoder pass"));
        }
        for k in [2 * l + 1, 2 * l] {
            dh = unit_backward(&params.units[k], cached(k)?, &dh, &mut grads[4 * k..4 * k + 4])?;
        }
        if l > 0 {
            let (arg, shape) = &cache.pools[l - 1];
            dh = maxpool_backward(&dh, arg, *shape);
        }
    }
    if cfg.residual {
        dh.add_assign(d_output);
    }
    Ok((grads, dh))
}

/// Momentum buffers and schedule position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    pub epoch: usize,
    pub lr: f64,
}

impl OptState {
    pub fn new(params: &NetParams, lr: f64) -> Self {
        OptState {
            velocity: params.zero_grads(),
            epoch: 0,
            lr,
        }
    }
}

/// Classical momentum: `v ← m·v - lr·g`, `p ← p + v`.
pub fn sgd_momentum_step(params: &mut NetParams, grads: &[Vec<f64>], state: &mut OptState, momentum: f64) -> Result<()> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
    }
    let shapes: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
    let ok = grads.len() == shapes.len()
        && state.velocity.len() == shapes.len()
        && grads.iter().zip(&shapes).all(|(g, s)| g.len() == *s)
        && state.velocity.iter().zip(&shapes).all(|(v, s)| v.len() == *s);
    if !ok {
        return Err(Error::ShapeMismatch("gradients or velocities do not match the parameters".into()));
    }
    if let Some((slot, _)) = grads
        .iter()
        .enumerate()
        .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Divergence(format!(
            "non-finite gradient in parameter tensor {slot} at epoch {}",
            state.epoch
        )));
    }
    let lr = state.lr;
    params.visit_trainable_mut(|slot, p| {
        let v = &mut state.velocity[slot];
        for ((pv, vv), g) in p.iter_mut().zip(v.iter_mut()).zip(&grads[slot]) {
            *vv = momentum * *vv - lr * g;
            *pv += *vv;
        }
    });
    Ok(())
}

/// Packs contrast maps as `[B, 2, H, W]` with channels `(Re, Im)`.
pub fn maps_to_tensor(maps: &[&ContrastMap]) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::InvalidArgument("no maps to pack".into()))?;
    let (h, w) = first.chi.dim();
    let mut t = Tensor::zeros(maps.len(), 2, h, w);
    for (b, m) in maps.iter().enumerate() {
        if m.chi.dim() != (h, w) {
            return Err(Error::ShapeMismatch("maps in one batch must share a grid".into()));
        }
        let s = t.sample_mut(b);
        for (i, c) in m.chi.iter().enumerate() {
            s[i] = c.re;
            s[h * w + i] = c.im;
        }
    }
    Ok(t)
}

/// Inverse of [`maps_to_tensor`] on the given grid.
pub fn tensor_to_maps(t: &Tensor, grid: crate::grid::GridSpec) -> Result<Vec<ContrastMap>> {
    if t.c != 2 || t.h != grid.ny || t.w != grid.nx {
        return Err(Error::ShapeMismatch(format!("tensor {:?} does not hold maps on the grid", t.shape())));
    }
    let hw = t.h * t.w;
    (0..t.n)
        .map(|b| {
            let s = t.sample(b);
            let v = (0..hw).map(|i| num_complex::Complex64::new(s[i], s[hw + i])).collect();
            ContrastMap::from_vec(grid, v)
        })
        .collect()
}
