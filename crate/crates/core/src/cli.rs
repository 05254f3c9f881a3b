//! Command-line pipeline.
//!
//! Settings resolve as flags > config file (TOML) > `CCTFORGE_*` environment
//! variables > defaults, and every subcommand writes the resolved settings to
//! `<out>.run.json`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{corpus_stats, corpus_vocabulary, filter_records, ingest, read_records_file, write_records, FilterConfig, RejectEntry};
use crate::error::{Error, Result};
use crate::metrics::{reports_summary, write_reports_csv, MetricReport};
use crate::model::{
    grad_check, load_checkpoint, pretrain, save_checkpoint, Example, ModelConfig, ModelParams, PretrainOptions,
    TrainConfig, frame_target,
};
use crate::nngen::{build_index, diff_code_tokens, retrieve};
use crate::sampler::{epoch_seed, parse_task_list, write_samples, PretrainTask, Sampler, SamplerConfig};
use crate::tasks::{
    build_task_dataset, evaluate_task, finetune, markdown_table, run_ablation, split_dataset, AblationConfig,
    DownstreamTask, FinetuneConfig, SplitSpec,
};
use crate::tokens::{tokenize, Vocabulary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "cctforge", version, about = "Code-change pre-training pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Input file.
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Output file; the resolved settings go to `<out>.run.json`.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for record-parallel stages.
    #[arg(long)]
    pub workers: Option<usize>,
    /// TOML settings file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "max-steps")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw records, drop duplicates and unparseable diffs.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        rejects: Option<PathBuf>,
    },
    /// Apply the corpus quality filters.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        rejects: Option<PathBuf>,
        /// Comma-separated project names to drop.
        #[arg(long = "exclude-projects")]
        exclude_projects: Option<String>,
    },
    /// Per-language project, commit and size counts.
    Stats {
        #[command(flatten)]
        common: Common,
    },
    /// Materialize one epoch of pre-training samples.
    BuildSamples {
        #[command(flatten)]
        common: Common,
        /// Comma-separated pre-training tasks.
        #[arg(long)]
        tasks: Option<String>,
        /// Vocabulary file; built from the input and written here if missing.
        #[arg(long, value_name = "PATH")]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
    },
    /// Pre-train a model on a filtered corpus.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long, value_name = "PATH")]
        vocab: Option<PathBuf>,
        /// Fresh masks every epoch (`true`) or reuse epoch 0's samples.
        #[arg(long = "epoch-reseed")]
        epoch_reseed: Option<bool>,
    },
    /// Fine-tune a checkpoint on a downstream task.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        task: DownstreamTask,
        /// Starting checkpoint; random init when omitted.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        vocab: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of a downstream task.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: DownstreamTask,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Retrieval baseline for commit message generation.
    Nngen {
        #[command(flatten)]
        common: Common,
        #[arg(long = "rerank-k")]
        rerank_k: Option<usize>,
    },
    /// Pre-train with and without one task and compare downstream.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        exclude: PretrainTask,
        #[arg(long)]
        task: DownstreamTask,
        #[arg(long)]
        tasks: Option<String>,
    },
    /// Finite-difference check of the analytic gradients.
    GradCheck {
        #[command(flatten)]
        common: Common,
    },
}

/// Model dimensions; the vocabulary size comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        Self {
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            d_model: d.d_model,
            d_ff: d.d_ff,
            max_src_len: d.max_src_len,
            max_tgt_len: d.max_tgt_len,
            dropout_rate: d.dropout_rate,
        }
    }
}

impl ModelSettings {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_src_len: self.max_src_len,
            max_tgt_len: self.max_tgt_len,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub epoch_reseed: bool,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            epoch_reseed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSettings {
    /// Task-kind default when absent.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self {
            learning_rate: None,
            batch_size: 32,
            max_steps: 200,
            eval_every: 50,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckSettings {
    pub epsilon: f64,
    pub fraction: f64,
    pub min_checked: usize,
    pub tolerance: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            fraction: 0.01,
            min_checked: 20,
            tolerance: 1e-4,
        }
    }
}

/// Every setting a run can use, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub vocab_min_freq: usize,
    pub filter: FilterConfig,
    pub sampler: SamplerConfig,
    pub model: ModelSettings,
    pub pretrain: PretrainSettings,
    pub finetune: FinetuneSettings,
    pub split: SplitSpec,
    pub rerank_k: usize,
    pub grad_check: GradCheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            vocab_min_freq: 1,
            filter: FilterConfig::default(),
            sampler: SamplerConfig::default(),
            model: ModelSettings::default(),
            pretrain: PretrainSettings::default(),
            finetune: FinetuneSettings::default(),
            split: SplitSpec::by_timestamp(),
            rerank_k: 1,
            grad_check: GradCheckSettings::default(),
        }
    }
}

/// Environment overrides; `lookup` is usually `std::env::var`.
fn apply_env(cfg: &mut RunConfig, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.trim().parse().map_err(|_| Error::Config(format!("CCTFORGE_{key}: cannot parse `{v}`")))
    }
    let get = |k: &str| lookup(&format!("CCTFORGE_{k}"));
    if let Some(v) = get("SEED") {
        cfg.seed = parse("SEED", &v)?;
    }
    if let Some(v) = get("WORKERS") {
        cfg.workers = parse("WORKERS", &v)?;
    }
    if let Some(v) = get("LR") {
        let lr = parse("LR", &v)?;
        cfg.pretrain.learning_rate = lr;
        cfg.finetune.learning_rate = Some(lr);
    }
    if let Some(v) = get("BATCH_SIZE") {
        let b = parse("BATCH_SIZE", &v)?;
        cfg.pretrain.batch_size = b;
        cfg.finetune.batch_size = b;
    }
    if let Some(v) = get("MAX_STEPS") {
        let s = parse("MAX_STEPS", &v)?;
        cfg.pretrain.max_steps = s;
        cfg.finetune.max_steps = s;
    }
    if let Some(v) = get("TASKS") {
        cfg.sampler.enabled_tasks = parse_task_list(&v)?;
    }
    if let Some(v) = get("RERANK_K") {
        cfg.rerank_k = parse("RERANK_K", &v)?;
    }
    if let Some(v) = get("EPOCH_RESEED") {
        cfg.pretrain.epoch_reseed = parse("EPOCH_RESEED", &v)?;
    }
    Ok(())
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_file(cfg: RunConfig, path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let over: toml::Value =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut base = toml::Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    merge_toml(&mut base, over);
    base.try_into().map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Resolves settings for a parsed command line.
pub fn resolve_config(cmd: &Command, lookup: &dyn Fn(&str) -> Option<String>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    apply_env(&mut cfg, lookup)?;
    let common = command_common(cmd);
    let file = common.config.clone().or_else(|| lookup("CCTFORGE_CONFIG").map(PathBuf::from));
    if let Some(path) = file {
        cfg = apply_file(cfg, &path)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    let tasks_flag = match cmd {
        Command::BuildSamples { tasks, .. } | Command::Pretrain { tasks, .. } | Command::Ablate { tasks, .. } => {
            tasks.as_deref()
        }
        _ => None,
    };
    if let Some(t) = tasks_flag {
        cfg.sampler.enabled_tasks = parse_task_list(t)?;
    }
    match cmd {
        Command::Pretrain { train, epoch_reseed, .. } => {
            apply_pretrain_flags(&mut cfg, train);
            if let Some(r) = epoch_reseed {
                cfg.pretrain.epoch_reseed = *r;
            }
        }
        Command::Ablate { train, .. } => apply_pretrain_flags(&mut cfg, train),
        Command::Finetune { train, .. } => {
            if let Some(lr) = train.lr {
                cfg.finetune.learning_rate = Some(lr);
            }
            if let Some(b) = train.batch_size {
                cfg.finetune.batch_size = b;
            }
            if let Some(s) = train.max_steps {
                cfg.finetune.max_steps = s;
            }
        }
        Command::Filter { exclude_projects: Some(p), .. } => {
            cfg.filter.excluded_projects =
                p.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        }
        Command::Nngen { rerank_k: Some(k), .. } => cfg.rerank_k = *k,
        _ => {}
    }
    if cfg.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    if cfg.rerank_k == 0 {
        return Err(Error::Config("rerank-k must be at least 1".into()));
    }
    cfg.filter.validate()?;
    cfg.sampler.validate()?;
    Ok(cfg)
}

fn apply_pretrain_flags(cfg: &mut RunConfig, f: &TrainFlags) {
    if let Some(lr) = f.lr {
        cfg.pretrain.learning_rate = lr;
    }
    if let Some(b) = f.batch_size {
        cfg.pretrain.batch_size = b;
    }
    if let Some(s) = f.max_steps {
        cfg.pretrain.max_steps = s;
    }
}

fn command_common(cmd: &Command) -> &Common {
    match cmd {
        Command::Ingest { common, .. }
        | Command::Filter { common, .. }
        | Command::Stats { common }
        | Command::BuildSamples { common, .. }
        | Command::Pretrain { common, .. }
        | Command::Finetune { common, .. }
        | Command::Eval { common, .. }
        | Command::Nngen { common, .. }
        | Command::Ablate { common, .. }
        | Command::GradCheck { common } => common,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest { .. } => "ingest",
        Command::Filter { .. } => "filter",
        Command::Stats { .. } => "stats",
        Command::BuildSamples { .. } => "build-samples",
        Command::Pretrain { .. } => "pretrain",
        Command::Finetune { .. } => "finetune",
        Command::Eval { .. } => "eval",
        Command::Nngen { .. } => "nngen",
        Command::Ablate { .. } => "ablate",
        Command::GradCheck { .. } => "grad-check",
    }
}

/// `<path><suffix>`, e.g. `kept.jsonl` + `.run.json`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_run_config(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    let common = command_common(cmd);
    let record = serde_json::json!({
        "command": command_name(cmd),
        "input": common.input,
        "output": common.out,
        "config": cfg,
    });
    write_json(&sidecar_path(&common.out, ".run.json"), &record)
}

fn input(common: &Common) -> Result<&Path> {
    common.input.as_deref().ok_or_else(|| Error::Config("--in is required".into()))
}

fn vocab_for(path: Option<&Path>, records: &[crate::corpus::CommitRecord], min_freq: usize) -> Result<Vocabulary> {
    match path {
        Some(p) if p.exists() => Vocabulary::load(p),
        Some(p) => {
            let v = corpus_vocabulary(records, min_freq)?;
            v.save(p)?;
            Ok(v)
        }
        None => corpus_vocabulary(records, min_freq),
    }
}

fn finetune_config(task: DownstreamTask, cfg: &RunConfig) -> FinetuneConfig {
    let mut ft = FinetuneConfig::for_task(task);
    if let Some(lr) = cfg.finetune.learning_rate {
        ft.train.learning_rate = lr;
    }
    ft.train.batch_size = cfg.finetune.batch_size;
    ft.train.max_steps = cfg.finetune.max_steps;
    ft.train.seed = cfg.seed;
    ft.eval_every = cfg.finetune.eval_every;
    ft.patience = cfg.finetune.patience;
    ft
}

fn pretrain_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.pretrain.learning_rate,
        batch_size: cfg.pretrain.batch_size,
        max_steps: cfg.pretrain.max_steps,
        seed: cfg.seed,
    }
}

fn execute(cmd: &Command, cfg: &RunConfig, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let common = command_common(cmd);
    let out = common.out.as_path();
    match cmd {
        Command::Ingest { rejects, .. } => {
            let f = BufReader::new(File::open(input(common)?)?);
            let outcome = ingest(f)?;
            write_records(create(out)?, &outcome.records)?;
            let rp = rejects.clone().unwrap_or_else(|| sidecar_path(out, ".rejects.jsonl"));
            write_rejects(&rp, &outcome.rejects)?;
            writeln!(stdout, "ingested {} records, rejected {}", outcome.records.len(), outcome.rejects.len())?;
        }
        Command::Filter { rejects, .. } => {
            let records = read_records_file(input(common)?)?;
            let total = records.len();
            let (kept, rejected) = filter_records(records, &cfg.filter);
            write_records(create(out)?, &kept)?;
            let entries: Vec<RejectEntry> = rejected
                .iter()
                .map(|(id, why)| RejectEntry {
                    id: id.clone(),
                    reason: format!("{why:?}"),
                })
                .collect();
            let rp = rejects.clone().unwrap_or_else(|| sidecar_path(out, ".rejects.jsonl"));
            write_rejects(&rp, &entries)?;
            writeln!(stdout, "kept {} of {total}, rejected {}", kept.len(), rejected.len())?;
            let mut counts = std::collections::BTreeMap::new();
            for (_, why) in &rejected {
                *counts.entry(format!("{why:?}")).or_insert(0usize) += 1;
            }
            for (why, n) in counts {
                writeln!(stdout, "  {why}: {n}")?;
            }
        }
        Command::Stats { .. } => {
            let records = read_records_file(input(common)?)?;
            let stats = corpus_stats(&records);
            write_json(out, &stats.to_json())?;
            let header: Vec<String> = ["language", "projects", "commits", "bytes"].map(String::from).to_vec();
            let mut rows: Vec<Vec<String>> = stats
                .rows()
                .into_iter()
                .map(|(lang, r)| vec![lang, r.project_count.to_string(), r.commit_count.to_string(), r.byte_size.to_string()])
                .collect();
            let t = stats.totals();
            rows.push(vec!["total".into(), t.project_count.to_string(), t.commit_count.to_string(), t.byte_size.to_string()]);
            write!(stdout, "{}", markdown_table(&header, &rows))?;
        }
        Command::BuildSamples { vocab, epoch, .. } => {
            let records = read_records_file(input(common)?)?;
            let v = vocab_for(vocab.as_deref(), &records, cfg.vocab_min_freq)?;
            let sampler = Sampler::new(cfg.sampler.clone(), &v)?;
            let samples = sampler.build_epoch(&records, epoch_seed(cfg.seed, *epoch));
            write_samples(create(out)?, &samples)?;
            writeln!(stdout, "wrote {} samples from {} records", samples.len(), records.len())?;
        }
        Command::Pretrain { vocab, .. } => {
            let records = read_records_file(input(common)?)?;
            let v = vocab_for(vocab.as_deref(), &records, cfg.vocab_min_freq)?;
            let params = ModelParams::init(cfg.model.config(v.len()), cfg.seed)?;
            let opts = PretrainOptions {
                epoch_reseed: cfg.pretrain.epoch_reseed,
            };
            let outcome = pretrain(params, &records, &v, cfg.sampler.clone(), pretrain_config(cfg), &opts)?;
            save_checkpoint(out, &outcome.params, Some(&v))?;
            outcome.trace.write_csv(create(&sidecar_path(out, ".trace.csv"))?)?;
            let losses = outcome.trace.combined();
            writeln!(
                stdout,
                "pre-trained {} steps over {} epochs; combined loss {:.4} -> {:.4}",
                losses.len(),
                outcome.epochs,
                losses.first().copied().unwrap_or(f64::NAN),
                losses.last().copied().unwrap_or(f64::NAN)
            )?;
        }
        Command::Finetune {
            task,
            checkpoint,
            vocab,
            ..
        } => {
            let records = read_records_file(input(common)?)?;
            let (params, v) = match checkpoint {
                Some(p) => {
                    let (params, v) = load_checkpoint(p)?;
                    let v = match v {
                        Some(v) => v,
                        None => vocab_for(vocab.as_deref(), &records, cfg.vocab_min_freq)?,
                    };
                    (params, v)
                }
                None => {
                    let v = vocab_for(vocab.as_deref(), &records, cfg.vocab_min_freq)?;
                    (ModelParams::init(cfg.model.config(v.len()), cfg.seed)?, v)
                }
            };
            let splits = split_dataset(&records, &cfg.split)?;
            let train = build_task_dataset(&splits.train, *task).items;
            let valid = build_task_dataset(&splits.valid, *task).items;
            let outcome = finetune(params, *task, &train, &valid, &v, &finetune_config(*task, cfg))?;
            save_checkpoint(out, &outcome.params, Some(&v))?;
            write_json(&sidecar_path(out, ".history.json"), &outcome.history)?;
            writeln!(
                stdout,
                "fine-tuned {task} for {} steps on {} examples; best step {}",
                outcome.steps,
                train.len(),
                outcome.best_step
            )?;
        }
        Command::Eval { task, checkpoint, .. } => {
            let records = read_records_file(input(common)?)?;
            let (params, v) = load_checkpoint(checkpoint)?;
            let v = v.ok_or_else(|| Error::Checkpoint("checkpoint carries no vocabulary".into()))?;
            let splits = split_dataset(&records, &cfg.split)?;
            let test = build_task_dataset(&splits.test, *task).items;
            let eval = evaluate_task(&params, *task, &test, &v)?;
            write_report(out, &eval.reports, stdout)?;
            let mut w = create(&sidecar_path(out, ".predictions.jsonl"))?;
            for p in &eval.predictions {
                serde_json::to_writer(&mut w, p)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Command::Nngen { .. } => {
            let records = read_records_file(input(common)?)?;
            let splits = split_dataset(&records, &cfg.split)?;
            let v = corpus_vocabulary(&splits.train, cfg.vocab_min_freq)?;
            let index = build_index(&splits.train, &v);
            index.write_jsonl(create(&sidecar_path(out, ".index.jsonl"))?)?;
            let mut w = create(out)?;
            let mut per = Vec::new();
            for r in &splits.test {
                let patch = r.patch()?;
                let got = retrieve(&patch, &index, &v, cfg.rerank_k)?;
                let reference = tokenize(&r.message);
                if !reference.is_empty() {
                    per.push((r.id.clone(), crate::metrics::bleu_bnorm(&tokenize(&got.message), &reference)?));
                }
                serde_json::to_writer(
                    &mut w,
                    &serde_json::json!({"id": r.id, "retrieved": got.record_id, "message": got.message, "cosine": got.cosine, "diff_tokens": diff_code_tokens(&patch).len()}),
                )?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            let report = MetricReport::sentence_level("bnorm", per)?;
            write_report(&sidecar_path(out, ".metrics.json"), &[report], stdout)?;
        }
        Command::Ablate { exclude, task, .. } => {
            let records = read_records_file(input(common)?)?;
            let v = corpus_vocabulary(&records, cfg.vocab_min_freq)?;
            let ab = AblationConfig {
                model: cfg.model.config(v.len()),
                model_seed: cfg.seed,
                sampler: cfg.sampler.clone(),
                pretrain: pretrain_config(cfg),
                pretrain_options: PretrainOptions {
                    epoch_reseed: cfg.pretrain.epoch_reseed,
                },
                finetune: finetune_config(*task, cfg),
                task: *task,
                split: cfg.split.clone(),
            };
            let report = run_ablation(&records, &v, &ab, *exclude)?;
            let md = report.to_markdown();
            let mut w = create(out)?;
            w.write_all(md.as_bytes())?;
            w.flush()?;
            write_json(&sidecar_path(out, ".json"), &report)?;
            write!(stdout, "{md}")?;
        }
        Command::GradCheck { .. } => {
            let gc = &cfg.grad_check;
            let mc = ModelConfig {
                num_layers: 1,
                num_heads: 2,
                d_model: 8,
                d_ff: 16,
                vocab_size: 40,
                max_src_len: 16,
                max_tgt_len: 8,
                dropout_rate: 0.0,
            };
            let params = ModelParams::init(mc, cfg.seed)?;
            let batch = grad_check_batch(cfg.seed);
            let report = grad_check(&params, &batch, gc.epsilon, gc.fraction, gc.min_checked, cfg.seed)?;
            write_json(out, &report)?;
            writeln!(
                stdout,
                "checked {} of {} parameters: max relative error {:.3e}, gradient norm {:.4}",
                report.checked, report.total, report.max_rel_error, report.grad_norm
            )?;
            if !(report.max_rel_error < gc.tolerance) {
                return Err(Error::Numeric(format!(
                    "max relative error {:.3e} exceeds {:.1e}",
                    report.max_rel_error, gc.tolerance
                )));
            }
        }
    }
    Ok(())
}

/// Small mixed batch (one sequence task per pre-training objective slot and
/// one classification example) over a 40-token vocabulary.
pub fn grad_check_batch(seed: u64) -> Vec<Example> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ids = |n: usize| (0..n).map(|_| rng.random_range(12..40u32)).collect::<Vec<_>>();
    let mut with_cls = |n: usize| {
        let mut v = vec![crate::tokens::SpecialToken::Cls.id()];
        v.extend(ids(n));
        v
    };
    let mut out = Vec::new();
    for task in PretrainTask::ALL {
        let input = with_cls(6);
        let target = frame_target(&input[1..4], 8);
        out.push(Example::seq2seq(input, target, Some(task)));
    }
    out.push(Example::label(with_cls(5), true));
    out
}

fn write_rejects(path: &Path, rejects: &[RejectEntry]) -> Result<()> {
    let mut w = create(path)?;
    for r in rejects {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// JSON summary at `path`, per-example CSV at `<path>.csv`, Markdown table on
/// stdout.
fn write_report(path: &Path, reports: &[MetricReport], stdout: &mut (dyn Write + Send)) -> Result<()> {
    write_json(path, &reports_summary(reports))?;
    write_reports_csv(create(&sidecar_path(path, ".csv"))?, reports)?;
    let header = vec!["metric".to_string(), "value".into(), "count".into()];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| vec![r.metric.clone(), format!("{:.4}", r.aggregate), r.count.to_string()])
        .collect();
    write!(stdout, "{}", markdown_table(&header, &rows))?;
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, &|k| std::env::var(k).ok(), &mut std::io::stdout())
}

pub fn run_with_env<I, T>(args: I, lookup: &dyn Fn(&str) -> Option<String>, stdout: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve_config(&cli.command, lookup).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        write_run_config(&cli.command, &cfg)?;
        pool.install(|| execute(&cli.command, &cfg, stdout))
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
