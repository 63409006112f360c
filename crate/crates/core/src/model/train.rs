use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::{Batch, BatchItem};
use super::loss::{objective, LossParts};
use super::net::{forward, Mode};
use super::optim::{lr_at, AdamW, AdamWConfig};
use super::params::ModelParams;
use super::tensor::{Mat, Scalar};
use super::ModelError;
use crate::seeding::{Purpose, SeedStreams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            grad_accum: 1,
            lr: 1e-3,
            total_steps: 1000,
            warmup_steps: 100,
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lr > 0.0) {
            return Err(ModelError::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if self.warmup_steps > self.total_steps {
            return Err(ModelError::InvalidConfig(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(ModelError::InvalidConfig("batch_size and grad_accum must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub msp: f64,
    pub pop: f64,
    pub htp: f64,
    pub total: f64,
}

/// Owns parameters and optimizer state for a training run.
#[derive(Debug, Clone)]
pub struct Trainer<F> {
    pub params: ModelParams<F>,
    pub optimizer: AdamW<F>,
    pub config: TrainConfig,
    /// Completed optimizer updates.
    pub step: u64,
    micro_steps: u64,
    cursor: usize,
    epoch: u64,
    order: Vec<usize>,
}

fn head_grad_norms<F: Scalar>(params: &ModelParams<F>, grads: &[Option<Mat<F>>]) -> String {
    ["lm_head", "token_table", "pop_head", "htp_head"]
        .iter()
        .filter_map(|&name| {
            let i = params.index_of(name)?;
            let norm = grads[i]
                .as_ref()
                .map_or(0.0, |g| g.data.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt());
            Some(format!("{name}={norm:e}"))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

impl<F: Scalar> Trainer<F> {
    pub fn new(params: ModelParams<F>, config: TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Trainer {
            optimizer: AdamW::new(&params, config.adamw),
            params,
            config,
            step: 0,
            micro_steps: 0,
            cursor: 0,
            epoch: 0,
            order: Vec::new(),
        })
    }

    /// Loss and gradients of one micro-batch in training mode.
    pub fn loss_and_grads(&self, batch: &Batch, mode: Mode) -> Result<(LossParts, Vec<Option<Mat<F>>>), ModelError> {
        let c = &self.params.config;
        let mut f = forward(&self.params, batch, mode)?;
        let (total, parts) = objective(&mut f, batch, c.alpha, c.beta);
        let grads = f.tape.backward(total);
        Ok((parts, grads))
    }

    /// Losses in evaluation mode, without gradients.
    pub fn eval_loss(&self, batch: &Batch) -> Result<LossParts, ModelError> {
        let c = &self.params.config;
        let mut f = forward(&self.params, batch, Mode::Eval)?;
        Ok(objective(&mut f, batch, c.alpha, c.beta).1)
    }

    /// One optimizer update averaged over `micro_batches`.
    pub fn train_step(&mut self, micro_batches: &[Batch]) -> Result<LossRecord, ModelError> {
        if micro_batches.is_empty() {
            return Err(ModelError::ShapeMismatch("train_step needs at least one micro-batch".into()));
        }
        let n = micro_batches.len() as f64;
        let mut sum: Vec<Option<Mat<F>>> = vec![None; self.params.tensors.len()];
        let mut parts = LossParts::default();
        for batch in micro_batches {
            let mode = Mode::Train {
                dropout_stream: self.micro_steps,
            };
            self.micro_steps += 1;
            let (p, grads) = self.loss_and_grads(batch, mode)?;
            if !p.total.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    msp: p.msp,
                    pop: p.pop,
                    htp: p.htp,
                    grad_norms: head_grad_norms(&self.params, &grads),
                });
            }
            parts.msp += p.msp / n;
            parts.pop += p.pop / n;
            parts.htp += p.htp / n;
            parts.total += p.total / n;
            for (acc, g) in sum.iter_mut().zip(grads) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g),
                    (None, Some(g)) => *acc = Some(g),
                    _ => {}
                }
            }
        }
        if micro_batches.len() > 1 {
            let scale = F::from_f64(1.0 / n);
            for g in sum.iter_mut().flatten() {
                g.data.iter_mut().for_each(|x| *x *= scale);
            }
        }
        let lr = lr_at(self.step + 1, self.config.lr, self.config.warmup_steps);
        self.optimizer.step(&mut self.params, &sum, lr);
        self.step += 1;
        if !self.params.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                msp: parts.msp,
                pop: parts.pop,
                htp: parts.htp,
                grad_norms: head_grad_norms(&self.params, &sum),
            });
        }
        Ok(LossRecord {
            step: self.step,
            lr,
            msp: parts.msp,
            pop: parts.pop,
            htp: parts.htp,
            total: parts.total,
        })
    }

    /// Next `batch_size` items from a seeded per-epoch shuffle of `items`.
    pub fn next_batch(&mut self, items: &[BatchItem]) -> Batch {
        let k = self.config.batch_size.min(items.len());
        let mut chosen = Vec::with_capacity(k);
        while chosen.len() < k {
            if self.cursor >= self.order.len() || self.order.len() != items.len() {
                self.order = (0..items.len()).collect();
                let mut rng = SeedStreams::new(self.params.config.seed).stream(self.epoch, Purpose::Shuffle);
                self.order.shuffle(&mut rng);
                self.epoch += 1;
                self.cursor = 0;
            }
            chosen.push(items[self.order[self.cursor]].clone());
            self.cursor += 1;
        }
        Batch::new(&chosen)
    }

    /// Runs `steps` updates of `grad_accum` micro-batches each, reporting every record.
    pub fn fit(
        &mut self,
        items: &[BatchItem],
        steps: u64,
        mut on_record: impl FnMut(&LossRecord),
    ) -> Result<Option<LossRecord>, ModelError> {
        let mut last = None;
        for _ in 0..steps {
            let micro: Vec<Batch> = (0..self.config.grad_accum).map(|_| self.next_batch(items)).collect();
            let rec = self.train_step(&micro)?;
            on_record(&rec);
            last = Some(rec);
        }
        Ok(last)
    }
}
