use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{maps_to_tensor, net_backward, net_forward, net_init, sgd_momentum_step, tensor_to_maps};
use super::{Mode, NetConfig, NetParams, OptState, Tensor};
use crate::error::{Error, Result};
use crate::forward::GreensOperators;
use crate::grid::ContrastMap;
use crate::loss::{batch_beta, evaluate, LossVariant, TrainingSample};
use crate::metrics::{mse, ssim_contrast};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub epochs_max: usize,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub variant: LossVariant,
    /// SNR of the network inputs; `None` means noise-free.
    pub input_snr: Option<f64>,
    /// SNR of the scattered-field target of the field loss; `None` means noise-free.
    pub target_snr: Option<f64>,
    pub rng_seed: u64,
    /// Divide the batch loss by its β so step sizes are comparable across losses.
    pub normalize_by_beta: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            momentum: 0.99,
            epochs_max: 150,
            lr_halving_period: 20,
            batch_size: 8,
            variant: LossVariant::ContrastClean,
            input_snr: None,
            target_snr: None,
            rng_seed: 0,
            normalize_by_beta: true,
        }
    }
}

impl TrainConfig {
    /// Full-scale optimizer settings.
    pub fn full_scale() -> Self {
        TrainConfig {
            lr0: 5e-6,
            normalize_by_beta: false,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr0 must be finite and >= 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        match (self.variant, self.input_snr) {
            (LossVariant::ContrastClean, Some(_)) => {
                return Err(Error::Config("contrast-clean trains on noise-free inputs; drop input_snr".into()))
            }
            (LossVariant::ContrastNoisy, None) => {
                return Err(Error::Config("contrast-noisy needs input_snr".into()))
            }
            _ => {}
        }
        if self.target_snr.is_some() && self.variant != LossVariant::Field {
            return Err(Error::Config("target_snr only applies to the field loss".into()));
        }
        if self.input_snr.iter().chain(self.target_snr.iter()).any(|s| s.is_nan()) {
            return Err(Error::Config("SNR must not be NaN".into()));
        }
        if self.batch_size == 0 || self.lr_halving_period == 0 {
            return Err(Error::InvalidArgument("batch size and halving period must be positive".into()));
        }
        Ok(())
    }
}

/// `lr0 · 0.5^floor(epoch / period)`.
pub fn lr_schedule(lr0: f64, epoch: usize, period: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch / period.max(1)) as i32)
}

/// Schedule with the default 20-epoch halving period.
pub fn lr_at_epoch(lr0: f64, epoch: usize) -> f64 {
    lr_schedule(lr0, epoch, 20)
}

/// Parameters plus optimizer state; enough to resume training exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: NetParams,
    pub opt: OptState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub holdout_mse: Option<f64>,
    pub holdout_ssim: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,holdout_mse,holdout_ssim\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.17e},{:.17e},{},{}",
                e.epoch,
                e.lr,
                e.train_loss,
                opt(e.holdout_mse),
                opt(e.holdout_ssim)
            );
        }
        s
    }
}

/// Epoch-by-epoch training driver.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    ops: &'a GreensOperators,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(net_cfg: &NetConfig, cfg: TrainConfig, ops: &'a GreensOperators) -> Result<Self> {
        let params = net_init(net_cfg)?;
        let opt = OptState::new(&params, cfg.lr0);
        Self::resume(TrainState { params, opt }, cfg, ops)
    }

    pub fn resume(state: TrainState, cfg: TrainConfig, ops: &'a GreensOperators) -> Result<Self> {
        cfg.validate()?;
        state.params.config.validate()?;
        let grid = ops.grid();
        if (grid.ny, grid.nx) != (state.params.config.height, state.params.config.width) {
            return Err(Error::ShapeMismatch(format!(
                "network expects {}x{}, operators are {}x{}",
                state.params.config.height, state.params.config.width, grid.ny, grid.nx
            )));
        }
        Ok(Trainer { cfg, ops, state })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn finished(&self) -> bool {
        self.state.opt.epoch >= self.cfg.epochs_max
    }

    /// One pass over `train`. On failure the state is rolled back to the start of the epoch.
    pub fn run_epoch(&mut self, train: &[TrainingSample], holdout: Option<&[TrainingSample]>) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let backup = self.state.clone();
        match self.epoch_inner(train, holdout) {
            Ok(log) => Ok(log),
            Err(e) => {
                self.state = backup;
                Err(e)
            }
        }
    }

    fn epoch_inner(&mut self, train: &[TrainingSample], holdout: Option<&[TrainingSample]>) -> Result<EpochLog> {
        let epoch = self.state.opt.epoch;
        let lr = lr_schedule(self.cfg.lr0, epoch, self.cfg.lr_halving_period);
        self.state.opt.lr = lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let grid = *self.ops.grid();
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &train[i]).collect();
            let inputs: Vec<&ContrastMap> = batch.iter().map(|s| &s.chi_bp).collect();
            let x = maps_to_tensor(&inputs)?;
            let (out, cache) = net_forward(&self.state.params, &x, Mode::Train)?;
            let preds = tensor_to_maps(&out, grid)?;
            let kind = self.cfg.variant.kind();
            let beta = batch_beta(kind, &batch)?;
            let ops = self.ops;
            let evals = preds
                .par_iter()
                .zip(batch.par_iter())
                .map(|(p, s)| evaluate(kind, p, s, ops, beta))
                .collect::<Result<Vec<_>>>()?;
            let norm = if self.cfg.normalize_by_beta && beta > 0.0 { beta } else { 1.0 };
            let scale = 1.0 / (batch.len() as f64 * norm);
            let mut d_out = Tensor::zeros(out.n, out.c, out.h, out.w);
            let hw = out.h * out.w;
            let mut batch_loss = 0.0;
            for (b, e) in evals.iter().enumerate() {
                batch_loss += e.value * scale;
                let s = d_out.sample_mut(b);
                for (i, (gr, gi)) in e.grad_re.iter().zip(e.grad_im.iter()).enumerate() {
                    s[i] = gr * scale;
                    s[hw + i] = gi * scale;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!("training loss became {batch_loss} at epoch {epoch}")));
            }
            let (grads, _) = net_backward(&self.state.params, &cache, &d_out)?;
            sgd_momentum_step(&mut self.state.params, &grads, &mut self.state.opt, self.cfg.momentum)?;
            self.state.params.absorb_batch_stats(&cache);
            if !self.state.params.is_finite() {
                return Err(Error::Divergence(format!("parameters became non-finite at epoch {epoch}")));
            }
            total += batch_loss * batch.len() as f64;
        }
        self.state.opt.epoch += 1;

        let (holdout_mse, holdout_ssim) = match holdout {
            Some(h) if !h.is_empty() => {
                let (m, q) = evaluate_holdout(&self.state.params, h)?;
                (Some(m), q)
            }
            _ => (None, None),
        };
        Ok(EpochLog {
            epoch,
            lr,
            train_loss: total / train.len() as f64,
            holdout_mse,
            holdout_ssim,
        })
    }
}

fn evaluate_holdout(params: &NetParams, holdout: &[TrainingSample]) -> Result<(f64, Option<f64>)> {
    let inputs: Vec<ContrastMap> = holdout.iter().map(|s| s.chi_bp.clone()).collect();
    let preds = predict(params, &inputs)?;
    let mut m = 0.0;
    let mut q = 0.0;
    let mut ssim_ok = true;
    for (p, s) in preds.iter().zip(holdout) {
        m += mse(p, &s.chi_true)?;
        match ssim_contrast(p, &s.chi_true) {
            Ok(v) => q += v,
            Err(_) => ssim_ok = false,
        }
    }
    let n = holdout.len() as f64;
    Ok((m / n, ssim_ok.then_some(q / n)))
}

/// Eval-mode predictions in chunks of 16.
pub fn predict(params: &NetParams, inputs: &[ContrastMap]) -> Result<Vec<ContrastMap>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(16) {
        let refs: Vec<&ContrastMap> = chunk.iter().collect();
        let (y, _) = net_forward(params, &maps_to_tensor(&refs)?, Mode::Eval)?;
        out.extend(tensor_to_maps(&y, chunk[0].grid)?);
    }
    Ok(out)
}

/// Trains from a fresh initialization for `cfg.epochs_max` epochs.
pub fn train(
    train_set: &[TrainingSample],
    holdout: Option<&[TrainingSample]>,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    ops: &GreensOperators,
) -> Result<(NetParams, TrainLog)> {
    let mut trainer = Trainer::new(net_cfg, *cfg, ops)?;
    let mut log = TrainLog::default();
    while !trainer.finished() {
        log.epochs.push(trainer.run_epoch(train_set, holdout)?);
    }
    Ok((trainer.into_state().params, log))
}
