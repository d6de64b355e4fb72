//! Losses, optimizer and training loop for energy models and the
//! feed-forward baseline.

mod baseline;
mod losses;
mod optim;

pub use baseline::{baseline_from_str, baseline_to_string, FeedForwardBaseline, BASELINE_HEADER};
pub use losses::{estimate_weights, DiagWeights, LossContext, LossKind};
pub use optim::Adam;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::energy_models::{EnergyModel, ModelConfig, ModelVariant, Parametric};
use crate::error::{Error, Result};
use crate::evaluation::{stream_rng, Dataset, Sample};
use crate::textio::fmt_f64;

const SHUFFLE_STREAM: u64 = 4;
/// Stream for network initialization from a run seed.
pub const INIT_STREAM: u64 = 5;

/// A model with a flat parameter vector and a differentiable batch loss.
pub trait Trainable: Parametric + Clone {
    /// Loss of one sample; parameter gradients accumulate into `grad`.
    fn sample_loss(&self, s: &Sample, ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64>;

    /// Hook run on the training split before the first epoch.
    fn prepare(&mut self, _train: &[Sample]) {}
}

impl Trainable for EnergyModel {
    fn sample_loss(&self, s: &Sample, ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
        losses::sample_loss(self, s, ctx, grad)
    }
}

impl Trainable for FeedForwardBaseline {
    fn sample_loss(&self, s: &Sample, ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
        FeedForwardBaseline::sample_loss(self, s, ctx, grad)
    }

    fn prepare(&mut self, train: &[Sample]) {
        self.fit_scales(train);
    }
}

/// Mean sample loss over `batch` plus `l2·‖θ‖²`. With `grad` given it is
/// overwritten by the gradient of that value.
pub fn batch_loss<M: Trainable>(model: &M, batch: &[&Sample], ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / batch.len() as f64;
    let params = if ctx.l2 != 0.0 { model.params() } else { Vec::new() };
    let penalty = ctx.l2 * params.iter().map(|p| p * p).sum::<f64>();
    let mut total = 0.0;
    match grad {
        None => {
            for s in batch {
                total += model.sample_loss(s, ctx, None)?;
            }
        }
        Some(g) => {
            g.iter_mut().for_each(|v| *v = 0.0);
            for s in batch {
                total += model.sample_loss(s, ctx, Some(g))?;
            }
            g.iter_mut().for_each(|v| *v *= scale);
            for (gi, p) in g.iter_mut().zip(&params) {
                *gi += 2.0 * ctx.l2 * p;
            }
        }
    }
    Ok(total * scale + penalty)
}

/// Inverse-model loss for the structured and black-box Lagrangian
/// variants: `inverse` or `combined` kind in `ctx`.
pub fn delan_loss(model: &EnergyModel, batch: &[&Sample], ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
    if model.variant().is_hamiltonian() || !matches!(ctx.kind, LossKind::Inverse | LossKind::Combined) {
        return Err(Error::InvalidArgument(format!("'{}' is not a Lagrangian residual loss", ctx.kind)));
    }
    batch_loss(model, batch, ctx, grad)
}

/// Residual of Hamilton's equations for the Hamiltonian variants.
pub fn hnn_loss(model: &EnergyModel, batch: &[&Sample], ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
    if !model.variant().is_hamiltonian() || ctx.kind != LossKind::Hamiltonian {
        return Err(Error::InvalidArgument(format!("'{}' is not a Hamiltonian residual loss", ctx.kind)));
    }
    batch_loss(model, batch, ctx, grad)
}

/// One-step state prediction loss through Euler or RK4.
pub fn state_loss(model: &EnergyModel, batch: &[&Sample], ctx: &LossContext, grad: Option<&mut [f64]>) -> Result<f64> {
    if ctx.kind.scheme().is_none() {
        return Err(Error::InvalidArgument(format!("'{}' is not a state loss", ctx.kind)));
    }
    batch_loss(model, batch, ctx, grad)
}

/// Residual loss used when a variant is trained without an explicit choice.
pub fn default_loss(variant: ModelVariant) -> LossKind {
    if variant.is_hamiltonian() {
        LossKind::Hamiltonian
    } else {
        LossKind::Combined
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub model: ModelConfig,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub train_fraction: f64,
    /// Test loss is evaluated every this many epochs and at the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            epochs: 100,
            weight_decay: 1e-5,
            seed: 0,
            loss: LossKind::Combined,
            model: ModelConfig::default(),
            lr_decay: 1.0,
            train_fraction: 0.8,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("training config: {what}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("batch size, epochs and eval interval must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate decay must lie in (0, 1]");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must lie in (0, 1)");
        }
        if self.model.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn last_train_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }

    pub fn last_test_loss(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.test_loss)
    }

    /// Columns that are reproducible from the seed, without timings.
    pub fn losses(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.rows.iter().map(|r| (r.epoch, r.train_loss, r.test_loss)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss,wall_time\n");
        for r in &self.rows {
            let test = r.test_loss.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!("{},{},{},{:.3}\n", r.epoch, fmt_f64(r.train_loss), test, r.wall_time));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// The seeded train/test split used by [`train`].
pub fn training_split(dataset: &Dataset, cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    dataset.split(cfg.train_fraction, cfg.seed)
}

/// Loss context for `dataset` with weights from its training split.
pub fn loss_context(train: &Dataset, kind: LossKind) -> Result<LossContext> {
    if kind.scheme().is_some() && !train.has_next_state() {
        return Err(Error::InvalidArgument(format!("loss '{kind}' needs a dataset with next states")));
    }
    Ok(LossContext::new(kind, estimate_weights(&train.samples)?, train.meta.next_dt()))
}

/// Runs minibatch Adam over the training split for the configured epochs.
pub fn train<M: Trainable>(model: &mut M, dataset: &Dataset, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let (train_set, test_set) = training_split(dataset, cfg)?;
    let ctx = loss_context(&train_set, cfg.loss)?;
    model.prepare(&train_set.samples);

    let mut params = model.params();
    let mut grad = vec![0.0; params.len()];
    let mut opt = Adam::new(params.len(), cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let test_refs: Vec<&Sample> = test_set.samples.iter().collect();
    let start = Instant::now();
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let non_finite = || Error::NonFiniteLoss { epoch, batch: b };
            let loss = match batch_loss(model, &batch, &ctx, Some(&mut grad)) {
                Ok(l) => l,
                Err(Error::NumericOverflow { .. }) => return Err(non_finite()),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(non_finite());
            }
            opt.step(&mut params, &grad);
            model.set_params(&params)?;
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let test_loss = if !test_refs.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            Some(batch_loss(model, &test_refs, &ctx, None)?)
        } else {
            None
        };
        history.rows.push(HistoryRow {
            epoch: epoch + 1,
            train_loss: sum / count as f64,
            test_loss,
            wall_time: start.elapsed().as_secs_f64(),
        });
        opt.lr *= cfg.lr_decay;
    }
    Ok(history)
}
