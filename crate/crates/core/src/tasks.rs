//! Downstream tasks: dataset assembly, splits, fine-tuning, evaluation and
//! pre-training ablations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CommitRecord;
use crate::diff::serialize_change;
use crate::error::{Error, Result};
use crate::metrics::{auc, bleu_bnorm, exact_match_accuracy, f1_binary, gleu, MetricReport};
use crate::model::{
    classify, combined_pretrain_loss, frame_target, greedy_decode, input_ids, pretrain, strip_eos, Example,
    ModelConfig, ModelParams, PretrainOptions, TrainConfig, Trainer, CLASSIFICATION_LR, PRETRAIN_LR,
};
use crate::sampler::{PretrainTask, SamplerConfig};
use crate::tokens::{tokenize, SpecialToken, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownstreamTask {
    CommitMsgGen,
    CommentUpdate,
    DefectPredict,
    QualityEstimate,
    ReviewGen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Generation,
    Classification,
}

impl DownstreamTask {
    pub const ALL: [DownstreamTask; 5] = [
        DownstreamTask::CommitMsgGen,
        DownstreamTask::CommentUpdate,
        DownstreamTask::DefectPredict,
        DownstreamTask::QualityEstimate,
        DownstreamTask::ReviewGen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DownstreamTask::CommitMsgGen => "commit-msg-gen",
            DownstreamTask::CommentUpdate => "comment-update",
            DownstreamTask::DefectPredict => "defect-predict",
            DownstreamTask::QualityEstimate => "quality-estimate",
            DownstreamTask::ReviewGen => "review-gen",
        }
    }

    pub fn kind(self) -> TaskKind {
        match self {
            DownstreamTask::DefectPredict | DownstreamTask::QualityEstimate => TaskKind::Classification,
            _ => TaskKind::Generation,
        }
    }

    /// Metric names reported by [`evaluate_task`], primary first.
    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            DownstreamTask::CommitMsgGen => &["bnorm"],
            DownstreamTask::CommentUpdate => &["gleu", "accuracy"],
            DownstreamTask::DefectPredict | DownstreamTask::QualityEstimate => &["f1", "auc"],
            DownstreamTask::ReviewGen => &["bleu4"],
        }
    }

    /// Fine-tuning defaults by task kind.
    pub fn default_train_config(self) -> TrainConfig {
        TrainConfig {
            learning_rate: match self.kind() {
                TaskKind::Classification => CLASSIFICATION_LR,
                TaskKind::Generation => PRETRAIN_LR,
            },
            ..TrainConfig::default()
        }
    }
}

impl fmt::Display for DownstreamTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DownstreamTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DownstreamTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskTarget {
    Tokens(Vec<String>),
    Label(bool),
}

/// One assembled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskItem {
    pub record_id: String,
    pub input_tokens: Vec<String>,
    pub target: TaskTarget,
    /// Text being edited (the old comment); used as GLEU source.
    pub source: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskDataset {
    pub items: Vec<TaskItem>,
    /// `(record_id, reason)` for records that could not be used.
    pub excluded: Vec<(String, String)>,
}

fn assemble(record: &CommitRecord, task: DownstreamTask) -> std::result::Result<TaskItem, String> {
    let patch = record.patch().map_err(|e| format!("diff: {e}"))?;
    let mut input = serialize_change(&patch).tokens;
    let need = |v: &Option<String>, what: &str| v.clone().ok_or_else(|| format!("missing label `{what}`"));
    let need_bool = |v: Option<bool>, what: &str| v.ok_or_else(|| format!("missing label `{what}`"));
    let l = &record.labels;
    let (target, source) = match task {
        DownstreamTask::CommitMsgGen => (TaskTarget::Tokens(tokenize(&record.message)), None),
        DownstreamTask::CommentUpdate => {
            let old = tokenize(&need(&l.old_comment, "old_comment")?);
            let new = tokenize(&need(&l.new_comment, "new_comment")?);
            input.push(SpecialToken::Sep.as_str().to_string());
            input.extend(old.iter().cloned());
            (TaskTarget::Tokens(new), Some(old))
        }
        DownstreamTask::DefectPredict => (TaskTarget::Label(need_bool(l.defective, "defective")?), None),
        // positive class: low quality
        DownstreamTask::QualityEstimate => (TaskTarget::Label(!need_bool(l.quality, "quality")?), None),
        DownstreamTask::ReviewGen => (TaskTarget::Tokens(tokenize(&need(&l.review, "review")?)), None),
    };
    if let TaskTarget::Tokens(t) = &target {
        if t.is_empty() {
            return Err("empty target text".into());
        }
    }
    Ok(TaskItem {
        record_id: record.id.clone(),
        input_tokens: input,
        target,
        source,
    })
}

/// Builds task inputs and targets; unusable records are excluded with a
/// logged reason.
pub fn build_task_dataset(records: &[CommitRecord], task: DownstreamTask) -> TaskDataset {
    let built: Vec<_> = records.par_iter().map(|r| assemble(r, task)).collect();
    let mut out = TaskDataset::default();
    for (r, b) in records.iter().zip(built) {
        match b {
            Ok(item) => out.items.push(item),
            Err(why) => {
                log::info!("{task}: record {} excluded: {why}", r.id);
                out.excluded.push((r.id.clone(), why));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Random,
    ByTimestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    Fractions {
        train: f64,
        valid: f64,
        test: f64,
        mode: SplitMode,
        seed: u64,
    },
    Explicit {
        train: Vec<String>,
        valid: Vec<String>,
        test: Vec<String>,
    },
}

impl SplitSpec {
    /// 60/20/20 chronological split per project.
    pub fn by_timestamp() -> Self {
        SplitSpec::Fractions {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
            mode: SplitMode::ByTimestamp,
            seed: 0,
        }
    }

    pub fn random(train: f64, valid: f64, test: f64, seed: u64) -> Self {
        SplitSpec::Fractions {
            train,
            valid,
            test,
            mode: SplitMode::Random,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<CommitRecord>,
    pub valid: Vec<CommitRecord>,
    pub test: Vec<CommitRecord>,
}

const CUT_EPS: f64 = 1e-9;

fn cut_points(n: usize, train: f64, valid: f64) -> (usize, usize) {
    let a = ((n as f64 * train) + CUT_EPS).floor() as usize;
    let b = ((n as f64 * (train + valid)) + CUT_EPS).floor() as usize;
    (a.min(n), b.min(n))
}

fn cut(records: Vec<CommitRecord>, train: f64, valid: f64, out: &mut Splits) {
    let (a, b) = cut_points(records.len(), train, valid);
    for (i, r) in records.into_iter().enumerate() {
        if i < a {
            out.train.push(r);
        } else if i < b {
            out.valid.push(r);
        } else {
            out.test.push(r);
        }
    }
}

/// Partitions records into train, validation and test lists.
pub fn split_dataset(records: &[CommitRecord], spec: &SplitSpec) -> Result<Splits> {
    let mut out = Splits::default();
    match spec {
        SplitSpec::Fractions {
            train,
            valid,
            test,
            mode,
            seed,
        } => {
            let fr = [*train, *valid, *test];
            if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + valid + test) - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("split fractions {fr:?} must be in [0,1] and sum to 1")));
            }
            match mode {
                SplitMode::Random => {
                    let mut shuffled = records.to_vec();
                    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                    cut(shuffled, *train, *valid, &mut out);
                }
                SplitMode::ByTimestamp => {
                    let mut by_project: BTreeMap<&str, Vec<&CommitRecord>> = BTreeMap::new();
                    for r in records {
                        if r.timestamp.is_none() {
                            return Err(Error::Dataset(format!("record {} has no timestamp", r.id)));
                        }
                        by_project.entry(&r.project).or_default().push(r);
                    }
                    for (_, mut rs) in by_project {
                        rs.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
                        cut(rs.into_iter().cloned().collect(), *train, *valid, &mut out);
                    }
                }
            }
        }
        SplitSpec::Explicit { train, valid, test } => {
            let mut seen: HashSet<&str> = HashSet::new();
            for id in train.iter().chain(valid).chain(test) {
                if !seen.insert(id) {
                    return Err(Error::Config(format!("id {id} appears in more than one split")));
                }
            }
            let sets: [HashSet<&str>; 3] = [train, valid, test].map(|v| v.iter().map(String::as_str).collect());
            for r in records {
                let slot = match sets.iter().position(|s| s.contains(r.id.as_str())) {
                    Some(0) => &mut out.train,
                    Some(1) => &mut out.valid,
                    Some(_) => &mut out.test,
                    None => return Err(Error::Config(format!("record {} is in no split", r.id))),
                };
                slot.push(r.clone());
            }
        }
    }
    Ok(out)
}

/// Model example for a task item.
pub fn item_example(item: &TaskItem, vocab: &Vocabulary, max_tgt_len: usize) -> Example {
    let input = input_ids(&item.input_tokens, vocab);
    match &item.target {
        TaskTarget::Tokens(t) => Example::seq2seq(input, frame_target(&vocab.encode(t), max_tgt_len), None),
        TaskTarget::Label(y) => Example::label(input, *y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    /// Validation runs every this many steps.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
}

impl FinetuneConfig {
    pub fn for_task(task: DownstreamTask) -> Self {
        Self {
            train: task.default_train_config(),
            eval_every: 50,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub metric: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub params: ModelParams,
    pub history: Vec<ValidationPoint>,
    pub best_step: usize,
    pub steps: usize,
}

fn better(a: &ValidationPoint, b: &ValidationPoint) -> bool {
    a.metric > b.metric || (a.metric == b.metric && a.loss < b.loss)
}

fn validate(params: &ModelParams, task: DownstreamTask, items: &[TaskItem], vocab: &Vocabulary, step: usize) -> Result<ValidationPoint> {
    let max_tgt = params.config.max_tgt_len;
    let examples: Vec<Example> = items.iter().map(|i| item_example(i, vocab, max_tgt)).collect();
    let loss = combined_pretrain_loss(params, &examples)?.0;
    let eval = evaluate_task(params, task, items, vocab)?;
    let metric = eval.reports.first().map(|r| r.aggregate).unwrap_or(f64::NAN);
    Ok(ValidationPoint {
        step,
        metric: if metric.is_nan() { 0.0 } else { metric },
        loss,
    })
}

/// Fine-tunes on `train` and returns the parameters with the best validation
/// score. Stops after `patience` evaluations without improvement.
pub fn finetune(
    params: ModelParams,
    task: DownstreamTask,
    train: &[TaskItem],
    valid: &[TaskItem],
    vocab: &Vocabulary,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if train.is_empty() {
        return Err(Error::Dataset(format!("{task}: empty training set")));
    }
    if cfg.train.max_steps == 0 {
        return Ok(FinetuneOutcome {
            params,
            history: Vec::new(),
            best_step: 0,
            steps: 0,
        });
    }
    let max_tgt = params.config.max_tgt_len;
    let examples: Vec<Example> = train.iter().map(|i| item_example(i, vocab, max_tgt)).collect();
    let mut trainer = Trainer::new(params, cfg.train.clone())?;
    let mut history = Vec::new();
    let mut best: Option<(ValidationPoint, ModelParams)> = None;
    let mut stale = 0;
    let mut step = 0;
    let mut epoch = 0u64;
    let eval_every = cfg.eval_every.max(1);
    'outer: while step < cfg.train.max_steps {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed ^ epoch.wrapping_mul(0x2545_f491_4f6c_dd1d)));
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            trainer.step(&batch)?;
            step += 1;
            let last = step == cfg.train.max_steps;
            if !valid.is_empty() && (step % eval_every == 0 || last) {
                let point = validate(&trainer.params, task, valid, vocab, step)?;
                log::info!("{task} step {step}: valid metric {:.4} loss {:.4}", point.metric, point.loss);
                history.push(point.clone());
                if best.as_ref().is_none_or(|(b, _)| better(&point, b)) {
                    best = Some((point, trainer.params.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break 'outer;
                    }
                }
            }
            if last {
                break 'outer;
            }
        }
        epoch += 1;
    }
    let (params, best_step) = match best {
        Some((p, params)) => (params, p.step),
        None => (trainer.params, step),
    };
    Ok(FinetuneOutcome {
        params,
        history,
        best_step,
        steps: step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub record_id: String,
    pub output: Option<Vec<String>>,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvaluation {
    pub task: DownstreamTask,
    pub reports: Vec<MetricReport>,
    pub predictions: Vec<Prediction>,
}

impl TaskEvaluation {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.metric == name).map(|r| r.aggregate)
    }
}

/// Decodes or classifies every test item and computes the task's metrics.
/// Does not modify `params`.
pub fn evaluate_task(
    params: &ModelParams,
    task: DownstreamTask,
    test: &[TaskItem],
    vocab: &Vocabulary,
) -> Result<TaskEvaluation> {
    if test.is_empty() {
        return Err(Error::Dataset(format!("{task}: empty test set")));
    }
    let max_tgt = params.config.max_tgt_len;
    let predictions: Vec<Prediction> = test
        .par_iter()
        .map(|item| {
            let input = input_ids(&item.input_tokens, vocab);
            Ok(match task.kind() {
                TaskKind::Generation => {
                    let ids = greedy_decode(params, &input, max_tgt)?;
                    Prediction {
                        record_id: item.record_id.clone(),
                        output: Some(vocab.decode(strip_eos(&ids))?),
                        probability: None,
                    }
                }
                TaskKind::Classification => Prediction {
                    record_id: item.record_id.clone(),
                    output: None,
                    probability: Some(classify(params, &input)?),
                },
            })
        })
        .collect::<Result<_>>()?;
    let reports = score_predictions(task, test, &predictions)?;
    Ok(TaskEvaluation {
        task,
        reports,
        predictions,
    })
}

/// Metric reports for predictions aligned with `items`.
pub fn score_predictions(task: DownstreamTask, items: &[TaskItem], preds: &[Prediction]) -> Result<Vec<MetricReport>> {
    let target_tokens = |i: &TaskItem| match &i.target {
        TaskTarget::Tokens(t) => Ok(t.clone()),
        TaskTarget::Label(_) => Err(Error::Dataset(format!("{task}: item {} has no text target", i.record_id))),
    };
    let label = |i: &TaskItem| match &i.target {
        TaskTarget::Label(y) => Ok(*y),
        TaskTarget::Tokens(_) => Err(Error::Dataset(format!("{task}: item {} has no label", i.record_id))),
    };
    let output = |p: &Prediction| p.output.clone().unwrap_or_default();
    match task {
        DownstreamTask::CommitMsgGen | DownstreamTask::ReviewGen => {
            let name = task.metrics()[0];
            let per = items
                .iter()
                .zip(preds)
                .map(|(i, p)| Ok((i.record_id.clone(), bleu_bnorm(&output(p), &target_tokens(i)?)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(vec![MetricReport::sentence_level(name, per)?])
        }
        DownstreamTask::CommentUpdate => {
            let mut per = Vec::new();
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            for (i, p) in items.iter().zip(preds) {
                let r = target_tokens(i)?;
                let src = i.source.clone().unwrap_or_default();
                per.push((i.record_id.clone(), gleu(&src, &output(p), &r)?));
                hyps.push(output(p));
                refs.push(r);
            }
            Ok(vec![
                MetricReport::sentence_level("gleu", per)?,
                MetricReport::corpus_level("accuracy", exact_match_accuracy(&hyps, &refs)?, items.len()),
            ])
        }
        DownstreamTask::DefectPredict | DownstreamTask::QualityEstimate => {
            let labels: Vec<bool> = items.iter().map(label).collect::<Result<_>>()?;
            let scores: Vec<f64> = preds.iter().map(|p| p.probability.unwrap_or(0.0)).collect();
            let decided: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
            let mut out = vec![MetricReport::corpus_level("f1", f1_binary(&decided, &labels)?, items.len())];
            match auc(&scores, &labels) {
                Ok(a) => out.push(MetricReport::corpus_level("auc", a, items.len())),
                Err(e) => log::warn!("{task}: auc not reported: {e}"),
            }
            Ok(out)
        }
    }
}

/// Settings of one pre-train, fine-tune and evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub model_seed: u64,
    pub sampler: SamplerConfig,
    pub pretrain: TrainConfig,
    pub pretrain_options: PretrainOptions,
    pub finetune: FinetuneConfig,
    pub task: DownstreamTask,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub tasks: BTreeSet<PretrainTask>,
    pub metrics: BTreeMap<String, f64>,
    pub final_pretrain_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub task: DownstreamTask,
    pub excluded: PretrainTask,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        let metrics = self.task.metrics();
        let header: Vec<String> = std::iter::once("configuration".to_string())
            .chain(metrics.iter().map(|m| m.to_string()))
            .collect();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.label.clone())
                    .chain(metrics.iter().map(|m| r.metrics.get(*m).map_or("-".into(), |v| format!("{v:.4}"))))
                    .collect()
            })
            .collect();
        markdown_table(&header, &rows)
    }
}

/// Renders a Markdown table.
pub fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

/// Pre-trains with `cfg.sampler`, fine-tunes on `cfg.task` and evaluates.
pub fn pretrain_finetune_eval(
    records: &[CommitRecord],
    vocab: &Vocabulary,
    cfg: &AblationConfig,
    sampler: SamplerConfig,
) -> Result<(TaskEvaluation, f64)> {
    let splits = split_dataset(records, &cfg.split)?;
    let params = ModelParams::init(cfg.model.clone(), cfg.model_seed)?;
    let pre = pretrain(params, &splits.train, vocab, sampler, cfg.pretrain.clone(), &cfg.pretrain_options)?;
    let final_loss = pre.trace.combined().last().copied().unwrap_or(f64::NAN);
    let train = build_task_dataset(&splits.train, cfg.task).items;
    let valid = build_task_dataset(&splits.valid, cfg.task).items;
    let test = build_task_dataset(&splits.test, cfg.task).items;
    let ft = finetune(pre.params, cfg.task, &train, &valid, vocab, &cfg.finetune)?;
    Ok((evaluate_task(&ft.params, cfg.task, &test, vocab)?, final_loss))
}

/// Compares the full pre-training task set with the set minus `excluded`.
pub fn run_ablation(
    records: &[CommitRecord],
    vocab: &Vocabulary,
    cfg: &AblationConfig,
    excluded: PretrainTask,
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (label, sampler) in [
        ("full".to_string(), cfg.sampler.clone()),
        (format!("minus-{excluded}"), cfg.sampler.clone().without(excluded)),
    ] {
        let tasks = sampler.enabled_tasks.clone();
        let (eval, loss) = pretrain_finetune_eval(records, vocab, cfg, sampler)?;
        rows.push(AblationRow {
            label,
            tasks,
            metrics: eval.reports.iter().map(|r| (r.metric.clone(), r.aggregate)).collect(),
            final_pretrain_loss: loss,
        });
    }
    Ok(AblationReport {
        task: cfg.task,
        excluded,
        rows,
    })
}
