//! Commit-record ingest, quality filters and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::diff::{parse_unified_diff, Patch};
use crate::error::{Error, Result};
use crate::tokens::tokenize;

/// Optional downstream-task annotations carried by a record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defective: Option<bool>,
    /// `true` when the change was accepted as-is (high quality).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<String>,
}

impl Labels {
    fn is_empty(&self) -> bool {
        self == &Labels::default()
    }
}

/// One commit: the code change and its message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitRecord {
    pub id: String,
    pub project: String,
    pub language: String,
    pub message: String,
    #[serde(rename = "diff")]
    pub diff_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_file: Option<String>,
    /// Unix seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
    #[serde(default, skip_serializing_if = "Labels::is_empty")]
    pub labels: Labels,
}

impl CommitRecord {
    pub fn patch(&self) -> Result<Patch> {
        Ok(parse_unified_diff(&self.diff_text)?)
    }

    /// Serialized JSONL line (without newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }

    fn byte_size(&self) -> u64 {
        let opt = |s: &Option<String>| s.as_ref().map_or(0, |s| s.len());
        (self.diff_text.len() + self.message.len() + opt(&self.old_file) + opt(&self.new_file)) as u64
    }
}

/// Parses one JSONL line. `line_no` is 1-based and reported in errors.
pub fn parse_commit_record(line: &str, line_no: usize) -> Result<CommitRecord> {
    let rec: CommitRecord = serde_json::from_str(line).map_err(|e| Error::RecordParse {
        line: line_no,
        message: e.to_string(),
    })?;
    if rec.id.is_empty() {
        return Err(Error::RecordParse {
            line: line_no,
            message: "empty id".into(),
        });
    }
    Ok(rec)
}

/// Reads every non-blank line of a JSONL corpus, failing on the first bad record.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<CommitRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_commit_record(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_records_file(path: &std::path::Path) -> Result<Vec<CommitRecord>> {
    let f = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(f))
}

pub fn write_records<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a CommitRecord>,
) -> Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json_line())?;
    }
    w.flush()?;
    Ok(())
}

/// Entry of a reject report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectEntry {
    pub id: String,
    pub reason: String,
}

/// Result of validating a raw export.
#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub records: Vec<CommitRecord>,
    pub rejects: Vec<RejectEntry>,
}

/// Validates a raw export: every line must parse, ids must be unique and
/// diffs must parse. Failures are collected as rejects instead of aborting.
pub fn ingest<R: BufRead>(reader: R) -> Result<IngestOutcome> {
    let mut out = IngestOutcome::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = match parse_commit_record(&line, i + 1) {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(RejectEntry {
                    id: format!("line:{}", i + 1),
                    reason: format!("ParseError: {e}"),
                });
                continue;
            }
        };
        if !seen.insert(rec.id.clone()) {
            out.rejects.push(RejectEntry {
                id: rec.id,
                reason: "DuplicateId".into(),
            });
            continue;
        }
        if let Err(e) = parse_unified_diff(&rec.diff_text) {
            out.rejects.push(RejectEntry {
                id: rec.id,
                reason: format!("DiffError: {e}"),
            });
            continue;
        }
        out.records.push(rec);
    }
    Ok(out)
}

/// Path rule used for test-file detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PathPattern {
    /// Some `/`-separated segment equals the value.
    Segment(String),
    /// File stem (name without final extension) starts with the value.
    StemPrefix(String),
    /// File stem ends with the value.
    StemSuffix(String),
}

impl PathPattern {
    pub fn defaults() -> Vec<PathPattern> {
        use PathPattern::*;
        vec![
            Segment("test".into()),
            Segment("tests".into()),
            StemPrefix("test_".into()),
            StemPrefix("Test".into()),
            StemSuffix("_test".into()),
            StemSuffix("Test".into()),
            StemSuffix(".test".into()),
        ]
    }

    fn matches(&self, segments: &[&str], stem: &str) -> bool {
        match self {
            PathPattern::Segment(s) => segments.iter().any(|seg| seg == s),
            PathPattern::StemPrefix(p) => stem.starts_with(p.as_str()),
            PathPattern::StemSuffix(p) => stem.ends_with(p.as_str()),
        }
    }
}

pub fn is_test_file(path: &str, patterns: &[PathPattern]) -> bool {
    let segments: Vec<&str> = path.split(['/', '\\']).filter(|s| !s.is_empty()).collect();
    let Some(file) = segments.last() else {
        return false;
    };
    let stem = match file.rfind('.') {
        Some(i) if i > 0 => &file[..i],
        _ => file,
    };
    patterns.iter().any(|p| p.matches(&segments, stem))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_message_tokens_exclusive: usize,
    pub max_diff_tokens: usize,
    pub excluded_projects: BTreeSet<String>,
    pub test_path_patterns: Vec<PathPattern>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_message_tokens_exclusive: 3,
            max_diff_tokens: 100,
            excluded_projects: BTreeSet::new(),
            test_path_patterns: PathPattern::defaults(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_diff_tokens < 1 {
            return Err(Error::Config("max_diff_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Why a record was filtered out, in rule-check order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    ShortMessage,
    LongDiff,
    TestFile,
    ExcludedProject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVerdict {
    Keep,
    Reject(RejectReason),
}

/// Applies the quality rules in order and reports the first violation.
/// A record whose diff does not parse has no measurable diff and is
/// reported as `LongDiff`.
pub fn apply_filters(record: &CommitRecord, cfg: &FilterConfig) -> FilterVerdict {
    if tokenize(&record.message).len() <= cfg.min_message_tokens_exclusive {
        return FilterVerdict::Reject(RejectReason::ShortMessage);
    }
    let patch = match record.patch() {
        Ok(p) => p,
        Err(_) => return FilterVerdict::Reject(RejectReason::LongDiff),
    };
    if patch.payload_token_count() > cfg.max_diff_tokens {
        return FilterVerdict::Reject(RejectReason::LongDiff);
    }
    if patch
        .paths()
        .iter()
        .any(|p| is_test_file(p, &cfg.test_path_patterns))
    {
        return FilterVerdict::Reject(RejectReason::TestFile);
    }
    if cfg.excluded_projects.contains(&record.project) {
        return FilterVerdict::Reject(RejectReason::ExcludedProject);
    }
    FilterVerdict::Keep
}

/// Splits records into kept ones and `(id, reason)` rejects, preserving order.
pub fn filter_records(
    records: Vec<CommitRecord>,
    cfg: &FilterConfig,
) -> (Vec<CommitRecord>, Vec<(String, RejectReason)>) {
    let verdicts: Vec<FilterVerdict> = {
        use rayon::prelude::*;
        records.par_iter().map(|r| apply_filters(r, cfg)).collect()
    };
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (r, v) in records.into_iter().zip(verdicts) {
        match v {
            FilterVerdict::Keep => kept.push(r),
            FilterVerdict::Reject(why) => rejected.push((r.id, why)),
        }
    }
    (kept, rejected)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LanguageStats {
    pub projects: BTreeSet<String>,
    pub commit_count: u64,
    pub byte_size: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub project_count: u64,
    pub commit_count: u64,
    pub byte_size: u64,
}

/// Per-language corpus statistics. Partial results merge associatively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub languages: BTreeMap<String, LanguageStats>,
}

impl CorpusStats {
    pub fn add(&mut self, record: &CommitRecord) {
        let e = self.languages.entry(record.language.clone()).or_default();
        e.projects.insert(record.project.clone());
        e.commit_count += 1;
        e.byte_size += record.byte_size();
    }

    pub fn merge(mut self, other: CorpusStats) -> CorpusStats {
        for (lang, s) in other.languages {
            let e = self.languages.entry(lang).or_default();
            e.projects.extend(s.projects);
            e.commit_count += s.commit_count;
            e.byte_size += s.byte_size;
        }
        self
    }

    pub fn rows(&self) -> BTreeMap<String, StatsRow> {
        self.languages
            .iter()
            .map(|(k, s)| {
                (
                    k.clone(),
                    StatsRow {
                        project_count: s.projects.len() as u64,
                        commit_count: s.commit_count,
                        byte_size: s.byte_size,
                    },
                )
            })
            .collect()
    }

    /// Column sums over languages.
    pub fn totals(&self) -> StatsRow {
        self.rows().values().fold(StatsRow::default(), |acc, r| StatsRow {
            project_count: acc.project_count + r.project_count,
            commit_count: acc.commit_count + r.commit_count,
            byte_size: acc.byte_size + r.byte_size,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "languages": self.rows(),
            "total": self.totals(),
        })
    }
}

pub fn corpus_stats<'a>(records: impl IntoIterator<Item = &'a CommitRecord>) -> CorpusStats {
    let mut s = CorpusStats::default();
    for r in records {
        s.add(r);
    }
    s
}

/// Vocabulary over diff code tokens, messages and label texts.
pub fn corpus_vocabulary(records: &[CommitRecord], min_freq: usize) -> Result<crate::tokens::Vocabulary> {
    let mut toks: Vec<String> = Vec::new();
    for r in records {
        if let Ok(p) = r.patch() {
            toks.extend(crate::diff::serialize_change(&p).code_tokens().cloned());
        }
        toks.extend(tokenize(&r.message));
        for text in [&r.labels.old_comment, &r.labels.new_comment, &r.labels.review].into_iter().flatten() {
            toks.extend(tokenize(text));
        }
    }
    crate::tokens::Vocabulary::build(toks, min_freq)
}
