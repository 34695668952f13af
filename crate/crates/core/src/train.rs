//! Minibatch training loop.

use log::info;

use crate::data::{batch_tensors, SampleWindow};
use crate::error::{Error, Result};
use crate::init::SplitMix64;
use crate::loss::{temporal_weights, tw_mpjpe_loss, WeightScheme, DEFAULT_ALPHA};
use crate::network::{Model, ModelHyper};
use crate::optim::{AdamConfig, AdamState, DEFAULT_LR};
use crate::params::{Graph, ParamGrads};
use crate::scalar::Scalar;

pub const DEFAULT_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hyper: ModelHyper,
    /// Decay rate of the exponential loss weights.
    pub alpha: f64,
    pub loss: WeightScheme,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint callback period in steps (0 disables it).
    pub save_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hyper: ModelHyper::default(),
            alpha: DEFAULT_ALPHA,
            loss: WeightScheme::Exp,
            lr: DEFAULT_LR,
            steps: 1000,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            save_interval: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    /// Minibatch loss before each update.
    pub history: Vec<f64>,
}

/// Epoch-wise seeded shuffling over window indices.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    seed: u64,
    len: usize,
    batch: usize,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            seed,
            len,
            batch: batch.clamp(1, len.max(1)),
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        SplitMix64::keyed(self.seed, &format!("epoch{}", self.epoch)).shuffle(&mut self.order);
        self.cursor = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.len {
            self.epoch += 1;
            self.reshuffle();
        }
        let b = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        b
    }
}

/// Loss and gradients of one minibatch.
pub fn loss_and_grads<T: Scalar>(
    model: &Model<T>,
    batch: &[&SampleWindow],
    weights: &crate::loss::LossWeights,
) -> Result<(f64, ParamGrads<T>)> {
    let (x, y) = batch_tensors::<T>(batch)?;
    let mut g = Graph::new(&model.params);
    let trace = model.forward(&mut g, &x)?;
    let loss = tw_mpjpe_loss(&mut g, trace.prediction, &y, weights)?;
    let value = g.value(loss).data()[0].to_f64_lossy();
    let grads = g.param_grads(loss)?;
    Ok((value, grads))
}

/// Trains a freshly initialized model. `on_save` runs every
/// `save_interval` steps.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    windows: &[SampleWindow],
    on_save: impl FnMut(usize, &Model<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let model = Model::new(cfg.hyper, cfg.seed)?;
    train_from(cfg, model, windows, on_save)
}

pub fn train_from<T: Scalar>(
    cfg: &TrainConfig,
    mut model: Model<T>,
    windows: &[SampleWindow],
    mut on_save: impl FnMut(usize, &Model<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    if windows.is_empty() {
        return Err(Error::Config("training needs at least one window".into()));
    }
    let h = &cfg.hyper;
    if let Some(w) = windows
        .iter()
        .find(|w| w.joints != h.joints || w.frames() != h.frames || w.horizon() != h.horizon)
    {
        return Err(Error::Hyper(format!(
            "window of {} joints / {}+{} frames does not fit a model of {} joints / {}+{} frames",
            w.joints,
            w.frames(),
            w.horizon(),
            h.joints,
            h.frames,
            h.horizon
        )));
    }
    let weights = temporal_weights(h.horizon, cfg.alpha, cfg.loss)?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut sampler = BatchSampler::new(windows.len(), cfg.batch_size, cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let idx = sampler.next_batch();
        let batch: Vec<&SampleWindow> = idx.iter().map(|&i| &windows[i]).collect();
        let (loss, grads) = loss_and_grads(&model, &batch, &weights)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss} at step {step}")));
        }
        adam.step(&mut model.params, &grads)?;
        history.push(loss);
        if step % 100 == 0 || step == cfg.steps {
            info!("step {step}/{}: loss {loss:.4}", cfg.steps);
        }
        if cfg.save_interval > 0 && step % cfg.save_interval == 0 {
            on_save(step, &model)?;
        }
    }
    Ok(TrainOutcome { model, history })
}
