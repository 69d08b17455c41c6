//! AdamW with warmup-cosine schedule, patch-packed training, checkpoints and
//! bits-per-byte evaluation.
//!
//! A training step takes the next fixed-patch-count batch, computes the mean
//! next-byte loss over its predicted bytes, clips the global gradient norm and
//! applies one AdamW update. Everything that influences the trajectory (weights,
//! moments, data cursor, divergence state) lives in [`Checkpoint`], so resuming
//! reproduces the uninterrupted run bit for bit.

mod checkpoint;
mod data;
mod eval;
mod optim;

pub use checkpoint::Checkpoint;
pub use data::{PatchBatch, PatchStream, PatchedCorpus, Segment, StreamCursor};
pub use eval::{
    bits_per_byte, check_disjoint, content_hashes, eval_bpb, BltScorer, ByteScorer, EvalReport, EvalSlice, ScoreSum,
    SliceReport, UniformScorer,
};
pub use optim::{adamw_step, clip_grads, lr_at, AdamState, OptimSpec, StepOutcome};

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::flops::{blt_flops_per_byte, ratio_from_f64, to_f64, Q};
use crate::model::Blt;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub patches_per_batch: usize,
    pub optim: OptimSpec,
    /// Seeds the data order.
    pub seed: u64,
    /// Evaluate every this many steps (0: only at the end).
    pub eval_every: usize,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Byte context used for the latent-attention term of the FLOP estimate.
    pub flops_context: usize,
    /// Abort when the loss exceeds `divergence_factor` times the first step's loss
    /// for `divergence_window` consecutive steps.
    pub divergence_window: usize,
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            patches_per_batch: 256,
            optim: OptimSpec {
                warmup_steps: 100,
                ..OptimSpec::default()
            },
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            flops_context: 1024,
            divergence_window: 100,
            divergence_factor: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate(self.steps)?;
        if self.patches_per_batch == 0 {
            return Err(Error::Config("patches_per_batch must be positive".into()));
        }
        if self.divergence_window == 0 || !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_window must be positive and divergence_factor above 1".into()));
        }
        Ok(())
    }
}

/// Tracks how long the loss has stayed far above its first value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DivergenceMonitor {
    pub initial: Option<f64>,
    pub streak: usize,
}

impl DivergenceMonitor {
    /// Record a loss; returns true once the divergence condition holds.
    pub fn observe(&mut self, loss: f64, factor: f64, window: usize) -> bool {
        let initial = *self.initial.get_or_insert(loss);
        if !loss.is_finite() || loss > factor * initial {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.streak >= window
    }
}

/// Deterministic per-step record: identical runs produce identical rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_nats: f64,
    pub bpb: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub patches: usize,
    pub bytes: usize,
    pub skipped: bool,
}

/// Wall-clock record, kept apart from [`StepMetrics`] because it varies between runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub step: usize,
    pub seconds: f64,
    pub patches_per_s: f64,
    pub bytes_per_s: f64,
    pub threads: usize,
}

pub struct Trainer<'c> {
    pub model: Blt,
    pub config: TrainConfig,
    corpus: &'c PatchedCorpus,
    stream: PatchStream<'c>,
    adam: AdamState,
    step: usize,
    monitor: DivergenceMonitor,
    skipped: u64,
    bytes_seen: u64,
    config_hash: [u8; 32],
    exec: Exec,
}

impl<'c> Trainer<'c> {
    pub fn new(model: Blt, config: TrainConfig, corpus: &'c PatchedCorpus, config_hash: [u8; 32], exec: Exec) -> Result<Self> {
        config.validate()?;
        let stream = PatchStream::new(corpus, config.patches_per_batch, config.seed)?;
        let adam = AdamState::new(&model.params.store);
        Ok(Trainer {
            model,
            config,
            corpus,
            stream,
            adam,
            step: 0,
            monitor: DivergenceMonitor::default(),
            skipped: 0,
            bytes_seen: 0,
            config_hash,
            exec,
        })
    }

    /// Continue from `ckpt`; `model` supplies the architecture and receives the stored weights.
    pub fn resume(mut model: Blt, config: TrainConfig, corpus: &'c PatchedCorpus, ckpt: &Checkpoint, exec: Exec) -> Result<Self> {
        config.validate()?;
        ckpt.restore_params(&mut model)?;
        let stream = PatchStream::resume(corpus, config.patches_per_batch, ckpt.cursor)?;
        Ok(Trainer {
            model,
            config,
            corpus,
            stream,
            adam: ckpt.adam.clone(),
            step: ckpt.step as usize,
            monitor: ckpt.monitor,
            skipped: ckpt.skipped_steps,
            bytes_seen: ckpt.bytes_seen,
            config_hash: ckpt.config_hash,
            exec,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    pub fn bytes_seen(&self) -> u64 {
        self.bytes_seen
    }

    pub fn config_hash(&self) -> [u8; 32] {
        self.config_hash
    }

    pub fn corpus(&self) -> &'c PatchedCorpus {
        self.corpus
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config_hash,
            step: self.step as u64,
            params: self.model.params.store.clone(),
            adam: self.adam.clone(),
            cursor: self.stream.cursor(),
            monitor: self.monitor,
            skipped_steps: self.skipped,
            bytes_seen: self.bytes_seen,
        }
    }

    /// Estimated training FLOPs spent so far, from the corpus's realized mean patch size.
    pub fn train_flops(&self) -> Result<f64> {
        let n_p = ratio_from_f64(self.corpus.stats().mean_patch_size);
        let per_byte = blt_flops_per_byte(&self.model.config, Q::from_integer(self.config.flops_context as i128), n_p)?;
        Ok(to_f64(per_byte.total_train()) * self.bytes_seen as f64)
    }

    /// One optimizer step. Fails with [`Error::Diverged`] when the divergence rule fires.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let batch = self.stream.next_batch();
        let input = batch.to_input(self.corpus, &self.model.config)?;
        let (loss, mut grads) = self.model.loss_and_grads(&input, self.exec);
        let n = loss.n_predicted.max(1);
        grads.scale(1.0 / n as f64);
        let mean = loss.loss_sum / n as f64;
        let lr = lr_at(self.step, &self.config.optim, self.config.steps);
        let out = if loss.n_predicted == 0 {
            StepOutcome {
                grad_norm: 0.0,
                clip_scale: 1.0,
                skipped: true,
            }
        } else {
            adamw_step(&mut self.model.params.store, &grads, &mut self.adam, &self.config.optim, lr)
        };
        if out.skipped {
            self.skipped += 1;
        }
        self.step += 1;
        let bytes = input.n_bytes();
        self.bytes_seen += bytes as u64;
        let metrics = StepMetrics {
            step: self.step,
            loss_nats: mean,
            bpb: bits_per_byte(loss.loss_sum, n),
            lr,
            grad_norm: out.grad_norm,
            patches: input.n_patches(),
            bytes,
            skipped: out.skipped,
        };
        if self.monitor.observe(mean, self.config.divergence_factor, self.config.divergence_window) {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!(
                    "loss {mean:.4} above {}x the initial {:.4} for {} consecutive steps",
                    self.config.divergence_factor,
                    self.monitor.initial.unwrap_or(f64::NAN),
                    self.monitor.streak
                ),
            });
        }
        Ok(metrics)
    }

    /// Step until the configured total, reporting each step to `observer`.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<()> {
        while !self.is_done() {
            let started = Instant::now();
            let m = self.step()?;
            let seconds = started.elapsed().as_secs_f64().max(1e-9);
            let t = Throughput {
                step: m.step,
                seconds,
                patches_per_s: m.patches as f64 / seconds,
                bytes_per_s: m.bytes as f64 / seconds,
                threads: self.exec.threads(),
            };
            observer.on_step(self, &m, &t)?;
        }
        Ok(())
    }
}

/// Callback invoked after every training step.
pub trait TrainObserver {
    fn on_step(&mut self, trainer: &Trainer<'_>, metrics: &StepMetrics, throughput: &Throughput) -> Result<()>;
}

/// Appends metrics and throughput rows as JSON lines.
pub struct JsonlLog<M: Write, T: Write> {
    pub metrics: M,
    pub throughput: T,
}

impl<M: Write, T: Write> JsonlLog<M, T> {
    pub fn record(&mut self, m: &StepMetrics, t: &Throughput) -> std::io::Result<()> {
        writeln!(self.metrics, "{}", serde_json::to_string(m).expect("serializable"))?;
        writeln!(self.throughput, "{}", serde_json::to_string(t).expect("serializable"))
    }
}

impl<M: Write, T: Write> TrainObserver for JsonlLog<M, T> {
    fn on_step(&mut self, _: &Trainer<'_>, m: &StepMetrics, t: &Throughput) -> Result<()> {
        self.record(m, t).map_err(|e| Error::io("metrics log", e))
    }
}
