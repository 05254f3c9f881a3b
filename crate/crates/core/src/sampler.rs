//! Sample generators for the five pre-training objectives.
//!
//! Every sample is a pure function of `(record, config, seed, task)`: the
//! random stream for a sample is a ChaCha generator keyed by a SHA-256 of
//! the epoch seed, the record id and the task name.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CommitRecord;
use crate::dataflow::{build_cdg_input, extract_dataflow};
use crate::diff::{push_line, serialize_change, LineKind, Patch};
use crate::error::{Error, Result};
use crate::tokens::{tokenize, SpecialToken, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainTask {
    Mlm4cc,
    Mlm4cm,
    Nl2pl,
    Pl2nl,
    Cdg,
}

impl PretrainTask {
    pub const ALL: [PretrainTask; 5] = [
        PretrainTask::Mlm4cc,
        PretrainTask::Mlm4cm,
        PretrainTask::Nl2pl,
        PretrainTask::Pl2nl,
        PretrainTask::Cdg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PretrainTask::Mlm4cc => "mlm4cc",
            PretrainTask::Mlm4cm => "mlm4cm",
            PretrainTask::Nl2pl => "nl2pl",
            PretrainTask::Pl2nl => "pl2nl",
            PretrainTask::Cdg => "cdg",
        }
    }
}

impl fmt::Display for PretrainTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PretrainTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PretrainTask::ALL
            .iter()
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown pre-training task `{s}`")))
    }
}

/// Parses a comma-separated task list such as `mlm4cc,pl2nl`.
pub fn parse_task_list(s: &str) -> Result<BTreeSet<PretrainTask>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(PretrainTask::from_str)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainSample {
    pub task: PretrainTask,
    pub record_id: String,
    #[serde(rename = "input")]
    pub input_tokens: Vec<String>,
    #[serde(rename = "target")]
    pub target_tokens: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub line_mask_rate: f64,
    pub token_mask_rate: f64,
    pub replace_mask_p: f64,
    pub replace_random_p: f64,
    pub keep_p: f64,
    pub enabled_tasks: BTreeSet<PretrainTask>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            line_mask_rate: 0.15,
            token_mask_rate: 0.15,
            replace_mask_p: 0.80,
            replace_random_p: 0.10,
            keep_p: 0.10,
            enabled_tasks: PretrainTask::ALL.into_iter().collect(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_unit(self.line_mask_rate) || !in_unit(self.token_mask_rate) {
            return Err(Error::Config("mask rates must lie in (0, 1)".into()));
        }
        let sum = self.replace_mask_p + self.replace_random_p + self.keep_p;
        if (sum - 1.0).abs() > 1e-9 || [self.replace_mask_p, self.replace_random_p, self.keep_p]
            .iter()
            .any(|p| *p < 0.0)
        {
            return Err(Error::Config(format!("replacement probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// All tasks except `excluded`.
    pub fn without(mut self, excluded: PretrainTask) -> Self {
        self.enabled_tasks.remove(&excluded);
        self
    }
}

/// Seed of the random stream for one (record, task) sample.
pub fn sample_seed(seed: u64, record_id: &str, task: PretrainTask) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((record_id.len() as u64).to_le_bytes());
    h.update(record_id.as_bytes());
    h.update(task.name().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed used for epoch `epoch` of a run started with `seed`.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    if epoch == 0 {
        return seed;
    }
    let mut h = Sha256::new();
    h.update(b"epoch");
    h.update(seed.to_le_bytes());
    h.update(epoch.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `ceil(rate * n)` with protection against floating-point overshoot.
pub fn mask_count(rate: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = rate * n as f64;
    let c = (raw - 1e-9).ceil().max(1.0) as usize;
    c.min(n)
}

/// Outcome drawn for one selected message position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskBranch {
    Mask,
    Random,
    Keep,
}

/// Selects `ceil(token_mask_rate * len)` positions of `tokens` and perturbs
/// them in place. Returns the selected positions (ascending) and the branch
/// drawn for each.
pub fn perturb_message<R: Rng>(
    tokens: &mut [String],
    cfg: &SamplerConfig,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<(usize, MaskBranch)>> {
    let k = mask_count(cfg.token_mask_rate, tokens.len());
    let mut picked = sample_indices(rng, tokens.len(), k).into_vec();
    picked.sort_unstable();
    let regular = vocab.regular_count();
    let mut out = Vec::with_capacity(k);
    for pos in picked {
        let u: f64 = rng.random();
        let branch = if u < cfg.replace_mask_p {
            MaskBranch::Mask
        } else if u < cfg.replace_mask_p + cfg.replace_random_p {
            MaskBranch::Random
        } else {
            MaskBranch::Keep
        };
        match branch {
            MaskBranch::Mask => tokens[pos] = SpecialToken::Mask.as_str().to_string(),
            MaskBranch::Random => {
                if regular == 0 {
                    return Err(Error::Sample {
                        task: PretrainTask::Mlm4cm.to_string(),
                        message: "vocabulary has no regular tokens to draw from".into(),
                    });
                }
                let id = SpecialToken::COUNT + rng.random_range(0..regular);
                tokens[pos] = vocab.token(id as u32).expect("id in range").to_string();
            }
            MaskBranch::Keep => {}
        }
        out.push((pos, branch));
    }
    Ok(out)
}

fn sample_err(task: PretrainTask, message: &str) -> Error {
    Error::Sample {
        task: task.to_string(),
        message: message.to_string(),
    }
}

/// Serializes the patch and message, replacing the code tokens of lines
/// whose global index is in `masked` by a single `[MASK]`.
fn masked_encoding(patch: &Patch, message: &str, masked: &[bool]) -> (Vec<String>, Vec<String>) {
    let mut input = vec![SpecialToken::Cls.as_str().to_string()];
    let mut target = Vec::new();
    for (i, line) in patch.lines().enumerate() {
        if masked[i] {
            input.push(line.kind.marker().as_str().to_string());
            input.push(SpecialToken::Mask.as_str().to_string());
            push_line(&mut target, line);
        } else {
            push_line(&mut input, line);
        }
    }
    input.push(SpecialToken::Msg.as_str().to_string());
    input.extend(tokenize(message));
    (input, target)
}

/// Generator bound to a vocabulary (needed for random replacement tokens).
#[derive(Debug, Clone)]
pub struct Sampler<'v> {
    pub cfg: SamplerConfig,
    pub vocab: &'v Vocabulary,
}

impl<'v> Sampler<'v> {
    pub fn new(cfg: SamplerConfig, vocab: &'v Vocabulary) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, vocab })
    }

    pub fn mlm4cc(&self, record: &CommitRecord, patch: &Patch, seed: u64) -> Result<PretrainSample> {
        let task = PretrainTask::Mlm4cc;
        let n = patch.line_count();
        if n == 0 {
            return Err(sample_err(task, "diff has no lines"));
        }
        let mut rng = rng_for(seed);
        let k = mask_count(self.cfg.line_mask_rate, n);
        let mut masked = vec![false; n];
        for i in sample_indices(&mut rng, n, k) {
            masked[i] = true;
        }
        let (input, target) = masked_encoding(patch, &record.message, &masked);
        Ok(PretrainSample {
            task,
            record_id: record.id.clone(),
            input_tokens: input,
            target_tokens: target,
            seed,
        })
    }

    pub fn mlm4cm(&self, record: &CommitRecord, patch: &Patch, seed: u64) -> Result<PretrainSample> {
        let task = PretrainTask::Mlm4cm;
        let mut msg = tokenize(&record.message);
        if msg.is_empty() {
            return Err(sample_err(task, "empty commit message"));
        }
        let original = msg.clone();
        let mut rng = rng_for(seed);
        let picks = perturb_message(&mut msg, &self.cfg, self.vocab, &mut rng)?;
        let mut input = serialize_change(patch).tokens;
        input.push(SpecialToken::Msg.as_str().to_string());
        input.extend(msg);
        Ok(PretrainSample {
            task,
            record_id: record.id.clone(),
            input_tokens: input,
            target_tokens: picks.iter().map(|(p, _)| original[*p].clone()).collect(),
            seed,
        })
    }

    pub fn nl2pl(&self, record: &CommitRecord, patch: &Patch, seed: u64) -> Result<PretrainSample> {
        let task = PretrainTask::Nl2pl;
        let masked: Vec<bool> = patch.lines().map(|l| l.kind == LineKind::Add).collect();
        if !masked.iter().any(|m| *m) {
            return Err(sample_err(task, "diff has no added lines"));
        }
        let (input, target) = masked_encoding(patch, &record.message, &masked);
        Ok(PretrainSample {
            task,
            record_id: record.id.clone(),
            input_tokens: input,
            target_tokens: target,
            seed,
        })
    }

    pub fn pl2nl(&self, record: &CommitRecord, patch: &Patch, seed: u64) -> Result<PretrainSample> {
        let task = PretrainTask::Pl2nl;
        let target = tokenize(&record.message);
        if target.is_empty() {
            return Err(sample_err(task, "empty commit message"));
        }
        Ok(PretrainSample {
            task,
            record_id: record.id.clone(),
            input_tokens: serialize_change(patch).tokens,
            target_tokens: target,
            seed,
        })
    }

    pub fn cdg(&self, record: &CommitRecord, patch: &Patch, seed: u64) -> Result<PretrainSample> {
        let task = PretrainTask::Cdg;
        let old = patch.old_view();
        let new = patch.new_view();
        let (input, _) = build_cdg_input(&old, &extract_dataflow(&old), &extract_dataflow(&new));
        let mut target = serialize_change(patch).tokens;
        target.remove(0);
        if target.is_empty() {
            return Err(sample_err(task, "diff has no lines"));
        }
        Ok(PretrainSample {
            task,
            record_id: record.id.clone(),
            input_tokens: input,
            target_tokens: target,
            seed,
        })
    }

    /// Sample for `task` with its stream keyed by `(seed, record.id, task)`.
    pub fn make(&self, task: PretrainTask, record: &CommitRecord, patch: &Patch, seed: u64) -> Result<PretrainSample> {
        let s = sample_seed(seed, &record.id, task);
        match task {
            PretrainTask::Mlm4cc => self.mlm4cc(record, patch, s),
            PretrainTask::Mlm4cm => self.mlm4cm(record, patch, s),
            PretrainTask::Nl2pl => self.nl2pl(record, patch, s),
            PretrainTask::Pl2nl => self.pl2nl(record, patch, s),
            PretrainTask::Cdg => self.cdg(record, patch, s),
        }
    }

    /// All applicable samples of one record, in task order.
    pub fn record_samples(&self, record: &CommitRecord, seed: u64) -> Vec<PretrainSample> {
        let Ok(patch) = record.patch() else {
            log::warn!("record {}: diff does not parse, skipped", record.id);
            return Vec::new();
        };
        self.cfg
            .enabled_tasks
            .iter()
            .filter_map(|&task| match self.make(task, record, &patch, seed) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::debug!("record {}: {e}", record.id);
                    None
                }
            })
            .collect()
    }

    /// One epoch of samples: per record one sample per enabled task,
    /// interleaved round-robin across tasks. Output does not depend on the
    /// size of the rayon pool.
    pub fn build_epoch(&self, records: &[CommitRecord], seed: u64) -> Vec<PretrainSample> {
        use rayon::prelude::*;
        let per_record: Vec<Vec<PretrainSample>> =
            records.par_iter().map(|r| self.record_samples(r, seed)).collect();
        let mut queues: Vec<std::collections::VecDeque<PretrainSample>> =
            self.cfg.enabled_tasks.iter().map(|_| Default::default()).collect();
        let tasks: Vec<PretrainTask> = self.cfg.enabled_tasks.iter().copied().collect();
        for samples in per_record {
            for s in samples {
                let q = tasks.iter().position(|t| *t == s.task).expect("enabled task");
                queues[q].push_back(s);
            }
        }
        let mut out = Vec::new();
        loop {
            let mut any = false;
            for q in queues.iter_mut() {
                if let Some(s) = q.pop_front() {
                    out.push(s);
                    any = true;
                }
            }
            if !any {
                break;
            }
        }
        out
    }
}

/// Writes samples as JSONL.
pub fn write_samples<W: std::io::Write>(mut w: W, samples: &[PretrainSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
