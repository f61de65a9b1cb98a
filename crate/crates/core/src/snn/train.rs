//! Mini-batch AdamW training on cross-entropy of summed readout scores.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::lif::SpikeFn;
use super::network::{NetworkParams, ParamTensors, SpikeInput};
use crate::error::{CteError, Result};
use crate::types::SpikeTensor;

/// Samples per gradient work unit. Fixed so the summation order, and therefore
/// the result, does not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub spike_fn: SpikeFn,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.0015,
            weight_decay: 5e-5,
            batch_size: 128,
            epochs: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            spike_fn: SpikeFn::Heaviside,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CteError::Config(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return bad("AdamW betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Borrowed inputs with their class labels.
#[derive(Debug)]
pub struct Dataset<'a, S = SpikeTensor> {
    pub inputs: &'a [S],
    pub labels: &'a [u8],
}

impl<S> Clone for Dataset<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for Dataset<'_, S> {}

impl<'a, S: SpikeInput> Dataset<'a, S> {
    pub fn new(inputs: &'a [S], labels: &'a [u8]) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(CteError::Length {
                expected: inputs.len(),
                found: labels.len(),
            });
        }
        if inputs.is_empty() {
            return Err(CteError::Data("empty dataset".into()));
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Decoupled weight decay Adam. Moments have the parameter layout.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamTensors,
    v: ParamTensors,
    step: u64,
}

impl AdamW {
    pub fn new(params: &NetworkParams, cfg: &TrainConfig) -> Self {
        AdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: ParamTensors::zeros(&params.arch),
            v: ParamTensors::zeros(&params.arch),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `w <- w (1 - lr wd)`, then the bias-corrected Adam update.
    pub fn step(&mut self, params: &mut ParamTensors, grads: &ParamTensors) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let shrink = 1.0 - self.lr * self.weight_decay;
        for (((w, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] = w[i] * shrink - self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub mean_spikes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub samples: usize,
    pub accuracy: f64,
    pub mean_spikes: f64,
}

/// Mean loss gradient of one batch plus its summed loss and correct count.
pub fn batch_gradients<S: SpikeInput>(
    params: &NetworkParams,
    data: &Dataset<S>,
    indices: &[usize],
    f: SpikeFn,
) -> Result<(ParamTensors, f64, usize)> {
    let parts: Vec<Result<(ParamTensors, f64, usize)>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = ParamTensors::zeros(&params.arch);
            let (mut loss, mut correct) = (0.0, 0);
            for &i in chunk {
                let y = data.labels[i] as usize;
                let (l, pred) = params.accumulate_gradients(&data.inputs[i], y, f, &mut g)?;
                loss += l;
                correct += (pred == y) as usize;
            }
            Ok((g, loss, correct))
        })
        .collect();
    let mut total = ParamTensors::zeros(&params.arch);
    let (mut loss, mut correct) = (0.0, 0);
    for part in parts {
        let (g, l, c) = part?;
        total.add_assign(&g);
        loss += l;
        correct += c;
    }
    total.scale(1.0 / indices.len().max(1) as f64);
    Ok((total, loss, correct))
}

/// Owns the parameters, optimizer state and shuffling RNG across epochs.
pub struct Trainer {
    pub params: NetworkParams,
    pub optimizer: AdamW,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(params: NetworkParams, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        params.arch.validate()?;
        let optimizer = AdamW::new(&params, &cfg);
        Ok(Trainer {
            params,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed),
            cfg,
            epoch: 0,
        })
    }

    /// One shuffled pass; returns mean loss and accuracy on the training data.
    pub fn run_epoch<S: SpikeInput>(&mut self, data: &Dataset<S>) -> Result<(f64, f64)> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let (grads, l, c) = batch_gradients(&self.params, data, batch, self.cfg.spike_fn)?;
            if !l.is_finite() || !grads.all_finite() {
                return Err(CteError::Divergence(format!(
                    "non-finite loss or gradient at epoch {} batch {b}: lr={} loss={l} grad_norm={}",
                    self.epoch,
                    self.cfg.lr,
                    grads.norm()
                )));
            }
            self.optimizer.step(&mut self.params.tensors, &grads);
            if !self.params.tensors.all_finite() {
                return Err(CteError::Divergence(format!(
                    "parameters became non-finite at epoch {} batch {b}: lr={} grad_norm={}",
                    self.epoch,
                    self.cfg.lr,
                    grads.norm()
                )));
            }
            loss += l;
            correct += c;
        }
        self.epoch += 1;
        Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn into_params(self) -> NetworkParams {
        self.params
    }
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each one.
pub fn train_with<S: SpikeInput>(
    params: NetworkParams,
    train: &Dataset<S>,
    val: Option<&Dataset<S>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(NetworkParams, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(params, *cfg)?;
    let train_spikes = mean_spikes(train.inputs);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (train_loss, train_acc) = trainer.run_epoch(train)?;
        let val_acc = match val {
            Some(v) => Some(evaluate(&trainer.params, v)?.accuracy),
            None => None,
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            train_acc,
            val_acc,
            mean_spikes: train_spikes,
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok((trainer.into_params(), history))
}

pub fn train<S: SpikeInput>(
    params: NetworkParams,
    train: &Dataset<S>,
    val: Option<&Dataset<S>>,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, Vec<EpochMetrics>)> {
    train_with(params, train, val, cfg, |_| {})
}

pub fn evaluate<S: SpikeInput>(params: &NetworkParams, data: &Dataset<S>) -> Result<EvalResult> {
    let correct: Result<Vec<bool>> = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &y)| Ok(params.predict(x)? == y as usize))
        .collect();
    let correct = correct?.into_iter().filter(|&c| c).count();
    Ok(EvalResult {
        samples: data.len(),
        accuracy: correct as f64 / data.len().max(1) as f64,
        mean_spikes: mean_spikes(data.inputs),
    })
}

fn mean_spikes<S: SpikeInput>(inputs: &[S]) -> f64 {
    let total: usize = inputs.par_iter().map(|t| t.spike_count()).sum();
    total as f64 / inputs.len().max(1) as f64
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_acc,mean_spikes";

pub fn history_row(m: &EpochMetrics) -> String {
    format!(
        "{},{:.6},{:.6},{},{:.3}",
        m.epoch,
        m.train_loss,
        m.train_acc,
        m.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default(),
        m.mean_spikes
    )
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for m in history {
        let _ = writeln!(out, "{}", history_row(m));
    }
    out
}
