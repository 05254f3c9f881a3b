//! Adam trainer, sample conversion and the pre-training loop.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::tensor::Tensor;
use super::transformer::{batch_loss_grad, frame_target, Example};
use crate::corpus::CommitRecord;
use crate::error::{Error, Result};
use crate::sampler::{epoch_seed, PretrainSample, Sampler, SamplerConfig};
use crate::tokens::{SpecialToken, Vocabulary};

pub const PRETRAIN_LR: f64 = 5e-5;
pub const CLASSIFICATION_LR: f64 = 2e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: PRETRAIN_LR,
            batch_size: 32,
            max_steps: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn classification() -> Self {
        Self {
            learning_rate: CLASSIFICATION_LR,
            ..Self::default()
        }
    }

    /// `learning_rate == 0` is accepted so that a step can be a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.t += 1;
        if lr == 0.0 {
            return;
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Summed loss of the batch before the update.
    pub loss: f64,
    pub per_task: BTreeMap<String, f64>,
}

/// Owns parameters and optimizer state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    pub cfg: TrainConfig,
    adam: Adam,
}

impl Trainer {
    pub fn new(params: ModelParams, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(&params);
        Ok(Self { params, cfg, adam })
    }

    pub fn steps_taken(&self) -> u64 {
        self.adam.steps()
    }

    /// One Adam step on the mean gradient of `batch`.
    pub fn step(&mut self, batch: &[Example]) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::Model("empty batch".into()));
        }
        let seeds = (self.params.config.dropout_rate > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ self.adam.steps().wrapping_mul(0x9e37_79b9_7f4a_7c15));
            (0..batch.len()).map(|_| rng.next_u64()).collect::<Vec<_>>()
        });
        let mut bg = batch_loss_grad(&self.params, batch, seeds.as_deref())?;
        if !bg.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {}", self.adam.steps())));
        }
        let scale = 1.0 / batch.len() as f64;
        for g in &mut bg.grads {
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at step {}", self.adam.steps())));
            }
            g.data.iter_mut().for_each(|x| *x *= scale);
        }
        self.adam.update(&mut self.params, &bg.grads, self.cfg.learning_rate);
        if !self.params.all_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after step {}", self.adam.steps())));
        }
        Ok(StepOutcome {
            loss: bg.loss,
            per_task: bg.per_task,
        })
    }
}

/// Single step from fresh optimizer state; returns updated params and the
/// pre-update loss.
pub fn train_step(params: &ModelParams, batch: &[Example], cfg: &TrainConfig) -> Result<(ModelParams, f64)> {
    let mut t = Trainer::new(params.clone(), cfg.clone())?;
    let out = t.step(batch)?;
    Ok((t.params, out.loss))
}

/// Converts a token-level sample into model ids with a framed target.
pub fn sample_to_example(sample: &PretrainSample, vocab: &Vocabulary, max_tgt_len: usize) -> Example {
    let input = vocab.encode(&sample.input_tokens);
    let target = frame_target(&vocab.encode(&sample.target_tokens), max_tgt_len);
    Example::seq2seq(input, target, Some(sample.task))
}

/// Input ids of a token sequence, prefixed with `[CLS]` if missing.
pub fn input_ids(tokens: &[String], vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = vocab.encode(tokens);
    if ids.first() != Some(&SpecialToken::Cls.id()) {
        ids.insert(0, SpecialToken::Cls.id());
    }
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub task: String,
    pub loss: f64,
}

/// Loss trace in `step,task,loss` form. Each step has one row per task group
/// and one `combined` row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn record(&mut self, step: usize, out: &StepOutcome) {
        for (task, loss) in &out.per_task {
            self.rows.push(TraceRow {
                step,
                task: task.clone(),
                loss: *loss,
            });
        }
        self.rows.push(TraceRow {
            step,
            task: "combined".into(),
            loss: out.loss,
        });
    }

    pub fn combined(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.task == "combined").map(|r| r.loss).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,task,loss")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.step, r.task, r.loss)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOptions {
    /// Draw fresh masks each epoch (`true`) or reuse epoch 0's samples.
    pub epoch_reseed: bool,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self { epoch_reseed: true }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    pub trace: LossTrace,
    pub epochs: u64,
}

/// Runs `train_cfg.max_steps` steps over epochs of sampler output.
pub fn pretrain(
    params: ModelParams,
    records: &[CommitRecord],
    vocab: &Vocabulary,
    sampler_cfg: SamplerConfig,
    train_cfg: TrainConfig,
    opts: &PretrainOptions,
) -> Result<PretrainOutcome> {
    let sampler = Sampler::new(sampler_cfg, vocab)?;
    let max_tgt = params.config.max_tgt_len;
    let mut trainer = Trainer::new(params, train_cfg.clone())?;
    let mut trace = LossTrace::default();
    let mut step = 0;
    let mut epoch = 0u64;
    let mut cached: Option<Vec<Example>> = None;
    while step < train_cfg.max_steps {
        let examples = match (&cached, opts.epoch_reseed) {
            (Some(ex), false) => ex.clone(),
            _ => {
                let s = if opts.epoch_reseed { epoch_seed(train_cfg.seed, epoch) } else { train_cfg.seed };
                let ex: Vec<Example> = sampler
                    .build_epoch(records, s)
                    .iter()
                    .map(|smp| sample_to_example(smp, vocab, max_tgt))
                    .collect();
                cached = Some(ex.clone());
                ex
            }
        };
        if examples.is_empty() {
            return Err(Error::Dataset("no pre-training samples could be built".into()));
        }
        for batch in examples.chunks(train_cfg.batch_size) {
            if step >= train_cfg.max_steps {
                break;
            }
            let out = trainer.step(batch)?;
            log::debug!("step {step} loss {:.6}", out.loss);
            trace.record(step, &out);
            step += 1;
        }
        epoch += 1;
    }
    Ok(PretrainOutcome {
        params: trainer.params,
        trace,
        epochs: epoch,
    })
}
