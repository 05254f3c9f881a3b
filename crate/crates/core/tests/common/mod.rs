#![allow(dead_code)]

pub mod dataflow_oracle;
pub mod metric_oracle;
pub mod reference_model;

use std::path::{Path, PathBuf};

use cctforge::corpus::{filter_records, CommitRecord, FilterConfig};
use cctforge::diff::{DiffLine, LineKind, Patch};
use cctforge::synthetic::{generate, SyntheticConfig, EXCLUDED_PROJECT};
use cctforge::tokens::tokenize;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/commits300.jsonl")
}

pub fn filter_config() -> FilterConfig {
    let mut f = FilterConfig::default();
    f.excluded_projects.insert(EXCLUDED_PROJECT.to_string());
    f
}

/// Clean synthetic records (no planted violations) with labels.
pub fn clean_corpus(records: usize, seed: u64) -> Vec<CommitRecord> {
    generate(&SyntheticConfig {
        records,
        seed,
        plant_rate: 0.0,
        with_labels: true,
    })
    .records
}

/// Fixture records after the default filters.
pub fn filtered_fixture() -> Vec<CommitRecord> {
    let records = cctforge::corpus::read_records_file(&fixture_path()).expect("fixture");
    filter_records(records, &filter_config()).0
}

const LINE_POOL: &[&str] = &[
    "x = y + 1",
    "total = total + x",
    "    count = load(count)",
    "return total",
    "if value is None:",
    "        return default",
    "name = \"gsheets\"",
    "allows_subqueries = False",
    "for item in items:",
    "    print(item)",
    "",
    "-- not a header",
    "++counter;",
    "--- dashes",
    "+++ pluses",
    "  indented   spacing  ",
    "result = compute(a, b) * 2",
    "# comment line",
    "buffer.append(token)",
    "}",
];

fn random_line(r: &mut ChaCha8Rng) -> String {
    if r.random_bool(0.3) {
        let a = ["alpha", "beta", "gamma", "delta", "eps"].choose(r).unwrap();
        let b = ["one", "two", "three", "four"].choose(r).unwrap();
        format!("{a}_{} = {b}({})", r.random_range(0..50), r.random_range(0..9))
    } else {
        LINE_POOL.choose(r).unwrap().to_string()
    }
}

/// A random 20-line file and an edited copy that differs from it.
pub fn random_file_pair(r: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let old: Vec<String> = (0..20).map(|_| random_line(r)).collect();
    loop {
        let mut new = old.clone();
        let edits = r.random_range(1..5);
        for _ in 0..edits {
            let len = new.len();
            match r.random_range(0..3) {
                0 if len > 1 => {
                    new.remove(r.random_range(0..len));
                }
                1 => {
                    let at = r.random_range(0..=len);
                    new.insert(at, random_line(r));
                }
                _ if len > 0 => {
                    let at = r.random_range(0..len);
                    new[at] = random_line(r);
                }
                _ => {}
            }
        }
        if new != old {
            return (old, new);
        }
    }
}

pub fn join_lines(lines: &[String]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    s
}

/// Unified diff of two files from the change list of the `similar` crate.
/// Hunk headers are counted from the emitted lines: the crate's own
/// formatter sometimes reports a wrong new-side range.
pub fn oracle_unified_diff(old: &[String], new: &[String], path: &str) -> String {
    use similar::ChangeTag;
    let (a, b) = (join_lines(old), join_lines(new));
    let diff = similar::TextDiff::from_lines(&a, &b);
    let mut out = format!("--- a/{path}\n+++ b/{path}\n");
    let mut delta: isize = 0;
    for group in diff.grouped_ops(3) {
        let old_first = group[0].old_range().start;
        let mut body = String::new();
        let (mut ol, mut nl) = (0usize, 0usize);
        for op in &group {
            for change in diff.iter_changes(op) {
                let (prefix, o, n) = match change.tag() {
                    ChangeTag::Equal => (' ', 1, 1),
                    ChangeTag::Delete => ('-', 1, 0),
                    ChangeTag::Insert => ('+', 0, 1),
                };
                ol += o;
                nl += n;
                body.push(prefix);
                body.push_str(change.value().strip_suffix('\n').unwrap_or(change.value()));
                body.push('\n');
            }
        }
        let new_first = (old_first as isize + delta) as usize;
        let shown = |first: usize, len: usize| if len == 0 { first } else { first + 1 };
        out.push_str(&format!(
            "@@ -{},{} +{},{} @@\n",
            shown(old_first, ol),
            ol,
            shown(new_first, nl),
            nl
        ));
        out.push_str(&body);
        delta += nl as isize - ol as isize;
    }
    out
}

/// Lines of a patch as `(kind, code tokens)`.
pub fn tokenized_lines(patch: &Patch) -> Vec<(LineKind, Vec<String>)> {
    patch.lines().map(|l: &DiffLine| (l.kind, tokenize(&l.text))).collect()
}

pub fn count(tokens: &[String], tok: &str) -> usize {
    tokens.iter().filter(|t| *t == tok).count()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small model shape used by the numeric tests.
pub fn tiny_config(num_layers: usize, num_heads: usize, d_model: usize, vocab_size: usize) -> cctforge::model::ModelConfig {
    cctforge::model::ModelConfig {
        num_layers,
        num_heads,
        d_model,
        d_ff: 2 * d_model,
        vocab_size,
        max_src_len: 24,
        max_tgt_len: 12,
        dropout_rate: 0.0,
    }
}

/// Runs the command line with the given environment; returns the exit code
/// and captured stdout.
pub fn run_cli(args: &[&str], env: &[(&str, &str)]) -> (i32, String) {
    let env: Vec<(String, String)> = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let lookup = move |k: &str| env.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    let mut out = Vec::new();
    let mut argv = vec!["cctforge"];
    argv.extend_from_slice(args);
    let code = cctforge::cli::run_with_env(argv, &lookup, &mut out);
    (code, String::from_utf8(out).expect("utf-8 stdout"))
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("readable json")).expect("valid json")
}

pub fn run_sidecar(out: &Path) -> serde_json::Value {
    read_json(&cctforge::cli::sidecar_path(out, ".run.json"))
}

/// A 20-line Python diff used for masking statistics.
pub fn twenty_line_record() -> CommitRecord {
    let mut diff = String::from("--- a/src/long.py\n+++ b/src/long.py\n@@ -1,12 +1,16 @@\n");
    for i in 0..20 {
        let prefix = match i % 5 {
            0 | 3 => ' ',
            1 | 4 => '+',
            _ => '-',
        };
        diff.push_str(&format!("{prefix}value_{i} = compute({i})\n"));
    }
    CommitRecord {
        id: "long-0".into(),
        project: "long".into(),
        language: "Python".into(),
        message: "recompute the twenty values in place now".into(),
        diff_text: diff,
        old_file: None,
        new_file: None,
        timestamp: None,
        labels: Default::default(),
    }
}
