//! Seeded generator of small commit corpora with learnable structure.
//!
//! Each clean record carries one of a handful of edit kinds whose message,
//! comment pair, review text and labels follow from the edit. Records can be
//! planted with exactly one filter violation for conformance checks.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommitRecord, Labels, RejectReason};
use crate::diff::{CodeDiff, DiffHunk, DiffLine, LineKind, Patch};

/// Project name planted records use for the excluded-project rule.
pub const EXCLUDED_PROJECT: &str = "legacy-mirror";

const VARS: &[&str] = &[
    "count", "limit", "offset", "total", "buffer", "result", "value", "index", "items", "name", "path", "size",
    "token", "user", "query", "record", "row", "key", "timeout", "retries",
];
const CALLS: &[&str] = &["load", "parse", "fetch", "compute", "read", "lookup", "build", "resolve"];
const MODULES: &[&str] = &["parser", "engine", "client", "utils", "config", "loader", "render", "cache", "store", "worker"];
const PROJECTS: &[&str] = &["alpha", "bravo", "cedar", "delta", "ember", "fjord", "grove", "harbor"];
const LANGUAGES: &[(&str, &str)] = &[("Python", "py"), ("Go", "go"), ("Java", "java"), ("JavaScript", "js"), ("Ruby", "rb"), ("PHP", "php")];
const SHORT_MESSAGES: &[&str] = &["fix", "wip", "minor fix", "update docs", "cleanup"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditKind {
    ChangeConst,
    Rename,
    AddCheck,
    RemoveCheck,
    AddLog,
    ChangeOperator,
}

impl EditKind {
    pub const ALL: [EditKind; 6] = [
        EditKind::ChangeConst,
        EditKind::Rename,
        EditKind::AddCheck,
        EditKind::RemoveCheck,
        EditKind::AddLog,
        EditKind::ChangeOperator,
    ];

    pub fn defective(self) -> bool {
        matches!(self, EditKind::RemoveCheck | EditKind::ChangeOperator)
    }

    pub fn high_quality(self) -> bool {
        !matches!(self, EditKind::RemoveCheck | EditKind::AddLog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub records: usize,
    pub seed: u64,
    /// Probability that a record is planted with each violation kind.
    pub plant_rate: f64,
    pub with_labels: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            records: 300,
            seed: 0,
            plant_rate: 0.0,
            with_labels: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<CommitRecord>,
    /// Planted violation per record id.
    pub planted: BTreeMap<String, RejectReason>,
    pub kinds: BTreeMap<String, EditKind>,
}

struct Edit {
    lines: Vec<DiffLine>,
    message: String,
    old_comment: String,
    new_comment: String,
    review: String,
}

fn keep(t: String) -> DiffLine {
    DiffLine { kind: LineKind::Keep, text: t }
}
fn del(t: String) -> DiffLine {
    DiffLine { kind: LineKind::Del, text: t }
}
fn add(t: String) -> DiffLine {
    DiffLine { kind: LineKind::Add, text: t }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty list")
}

fn two_vars(rng: &mut ChaCha8Rng) -> (&'static str, &'static str) {
    let a = pick(rng, VARS);
    loop {
        let b = pick(rng, VARS);
        if b != a {
            return (a, b);
        }
    }
}

fn make_edit(kind: EditKind, rng: &mut ChaCha8Rng) -> Edit {
    let (v, w) = two_vars(rng);
    let call = pick(rng, CALLS);
    let head = keep(format!("def {call}_{w}({w}):"));
    let ctx = keep(format!("    {w} = {call}({w})"));
    let tail = keep(format!("    return {v}"));
    match kind {
        EditKind::ChangeConst => {
            let a = rng.random_range(0..10);
            let b = a + rng.random_range(1..10);
            Edit {
                lines: vec![head, del(format!("    {v} = {a}")), add(format!("    {v} = {b}")), ctx],
                message: format!("update {v} from {a} to {b}"),
                old_comment: format!("{v} defaults to {a}"),
                new_comment: format!("{v} defaults to {b}"),
                review: format!("why change {v} to {b} here"),
            }
        }
        EditKind::Rename => Edit {
            lines: vec![
                head,
                del(format!("    {v} = {call}({w})")),
                add(format!("    {w}_new = {call}({w})")),
                del(format!("    return {v}")),
                add(format!("    return {w}_new")),
            ],
            message: format!("rename {v} to {w}_new"),
            old_comment: format!("returns the {v} of {w}"),
            new_comment: format!("returns the {w}_new of {w}"),
            review: format!("the name {w}_new is clearer"),
        },
        EditKind::AddCheck => Edit {
            lines: vec![
                head,
                ctx,
                add(format!("    if {v} is None:")),
                add(format!("        return {w}")),
                tail,
            ],
            message: format!("add none check for {v}"),
            old_comment: format!("assumes {v} is set"),
            new_comment: format!("falls back to {w} when {v} is none"),
            review: format!("good catch on {v}"),
        },
        EditKind::RemoveCheck => Edit {
            lines: vec![
                head,
                ctx,
                del(format!("    if {v} is None:")),
                del(format!("        return {w}")),
                tail,
            ],
            message: format!("drop none check for {v}"),
            old_comment: format!("falls back to {w} when {v} is none"),
            new_comment: format!("assumes {v} is set"),
            review: format!("please keep the check for {v}"),
        },
        EditKind::AddLog => Edit {
            lines: vec![head, ctx, add(format!("    print({v})")), tail],
            message: format!("log value of {v} before use"),
            old_comment: format!("returns {v} for {w}"),
            new_comment: format!("prints and returns {v} for {w}"),
            review: format!("remove the debug print of {v}"),
        },
        EditKind::ChangeOperator => Edit {
            lines: vec![
                head,
                del(format!("    if {v} > {w}:")),
                add(format!("    if {v} >= {w}:")),
                keep(format!("        {v} = {w}")),
            ],
            message: format!("allow equal {v} and {w}"),
            old_comment: format!("clamps {v} above {w}"),
            new_comment: format!("clamps {v} at or above {w}"),
            review: format!("is {v} equal to {w} really valid"),
        },
    }
}

fn hunk(lines: Vec<DiffLine>, start: usize) -> DiffHunk {
    let old_len = lines.iter().filter(|l| l.kind != LineKind::Add).count();
    let new_len = lines.iter().filter(|l| l.kind != LineKind::Del).count();
    DiffHunk {
        old_start: start,
        old_len,
        new_start: start,
        new_len,
        lines,
    }
}

/// Generates a corpus; identical configs give identical corpora.
pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.records);
    let mut planted = BTreeMap::new();
    let mut kinds = BTreeMap::new();
    let violations = [
        RejectReason::ShortMessage,
        RejectReason::LongDiff,
        RejectReason::TestFile,
        RejectReason::ExcludedProject,
    ];
    for i in 0..cfg.records {
        let plant = if rng.random::<f64>() < cfg.plant_rate * violations.len() as f64 {
            Some(*violations.choose(&mut rng).expect("non-empty"))
        } else {
            None
        };
        let pi = rng.random_range(0..PROJECTS.len());
        let mut project = PROJECTS[pi].to_string();
        let (language, ext) = LANGUAGES[pi % LANGUAGES.len()];
        let kind = *EditKind::ALL.choose(&mut rng).expect("non-empty");
        let mut edit = make_edit(kind, &mut rng);
        let module = pick(&mut rng, MODULES);
        let mut path = format!("src/{module}.{ext}");
        match plant {
            Some(RejectReason::ShortMessage) => edit.message = pick(&mut rng, SHORT_MESSAGES).to_string(),
            Some(RejectReason::LongDiff) => {
                for j in 0..20 {
                    let (a, b) = two_vars(&mut rng);
                    edit.lines.push(add(format!("    {a}_{j} = {b} + {j}")));
                }
            }
            Some(RejectReason::TestFile) => {
                path = if rng.random::<bool>() {
                    format!("tests/test_{module}.{ext}")
                } else {
                    format!("src/{module}_test.{ext}")
                }
            }
            Some(RejectReason::ExcludedProject) => project = EXCLUDED_PROJECT.to_string(),
            None => {}
        }
        let start = rng.random_range(1..200);
        let patch = Patch {
            files: vec![CodeDiff {
                old_path: path.clone(),
                new_path: path,
                hunks: vec![hunk(edit.lines, start)],
            }],
        };
        let id = format!("{project}-{i:05}");
        let labels = if cfg.with_labels {
            Labels {
                defective: Some(kind.defective()),
                quality: Some(kind.high_quality()),
                old_comment: Some(edit.old_comment),
                new_comment: Some(edit.new_comment),
                review: Some(edit.review),
            }
        } else {
            Labels::default()
        };
        if let Some(p) = plant {
            planted.insert(id.clone(), p);
        }
        kinds.insert(id.clone(), kind);
        records.push(CommitRecord {
            id,
            project,
            language: language.to_string(),
            message: edit.message,
            diff_text: patch.to_unified(),
            old_file: None,
            new_file: None,
            timestamp: Some(1_600_000_000 + i as i64 * 3600 + rng.random_range(0..600)),
            labels,
        });
    }
    SyntheticCorpus { records, planted, kinds }
}
