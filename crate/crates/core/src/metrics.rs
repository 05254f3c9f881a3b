//! Evaluation metrics: B-Norm BLEU, GLEU, accuracy, F1, AUC and the
//! Wilcoxon signed-rank test.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const MAX_N: usize = 4;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    out
}

/// Smoothed sentence BLEU-4 with an optional GLEU source penalty. No case
/// folding happens here.
fn smoothed_score<S: AsRef<str>>(hyp: &[S], reference: &[S], source: Option<&[S]>) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Metric("reference must not be empty".into()));
    }
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_N {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        let total: usize = h.values().sum();
        let matched: usize = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
        let penalty: usize = match source {
            Some(src) => {
                let s = ngram_counts(src, n);
                h.iter()
                    .filter(|(g, _)| !r.contains_key(*g))
                    .map(|(g, c)| (*c).min(s.get(g).copied().unwrap_or(0)))
                    .sum()
            }
            None => 0,
        };
        let num = matched.saturating_sub(penalty) as f64;
        let p = if n == 1 {
            num / total as f64
        } else {
            (num + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let (h, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if h < r { (1.0 - r / h).exp() } else { 1.0 };
    Ok(100.0 * bp * (log_sum / MAX_N as f64).exp())
}

fn lower<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens.iter().map(|t| t.as_ref().to_lowercase()).collect()
}

/// Case-insensitive sentence BLEU-4 with +1/+1 smoothing for n >= 2,
/// scaled to [0, 100].
pub fn bleu_bnorm<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> Result<f64> {
    smoothed_score(&lower(hypothesis), &lower(reference), None)
}

/// Smoothed BLEU-4 without case folding.
pub fn bleu_smoothed<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> Result<f64> {
    smoothed_score(hypothesis, reference, None)
}

/// Source-penalized GLEU: n-grams copied from the source but absent from the
/// reference are subtracted from the matches, floored at zero.
pub fn gleu<S: AsRef<str>>(source: &[S], hypothesis: &[S], reference: &[S]) -> Result<f64> {
    smoothed_score(hypothesis, reference, Some(source))
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Fraction of exactly equal (case-sensitive) token sequences.
pub fn exact_match_accuracy<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    check_len(hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let hits = hyps
        .iter()
        .zip(refs)
        .filter(|(h, r)| h.len() == r.len() && h.iter().zip(r.iter()).all(|(a, b)| a.as_ref() == b.as_ref()))
        .count();
    Ok(hits as f64 / hyps.len() as f64)
}

/// F1 with `true` as the positive class; 0 when precision + recall is 0.
pub fn f1_binary(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    check_len(predictions.len(), labels.len())?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Average 1-based ranks, ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney estimate of the ROC area; ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_len(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub p_value: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Largest `n` handled by exact enumeration of the null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;
pub const WILCOXON_MIN_N: usize = 6;

/// Two-sided Wilcoxon signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    check_len(a.len(), b.len())?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Metric("all differences are zero".into()));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Metric("non-finite difference".into()));
    }
    let n = diffs.len();
    if n < WILCOXON_MIN_N {
        return Err(Error::Metric(format!("{n} non-zero differences; at least {WILCOXON_MIN_N} required")));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= WILCOXON_EXACT_MAX {
        // average ranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut dist = vec![0.0f64; max + 1];
        dist[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                dist[s] += dist[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w2 = (w_plus * 2.0).round() as usize;
        let lower: f64 = dist[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = dist[w2..].iter().sum::<f64>() / all;
        return Ok(WilcoxonResult {
            statistic,
            w_plus,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            n,
            method: WilcoxonMethod::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        p_value: (2.0 * (1.0 - normal.cdf(z))).min(1.0),
        n,
        method: WilcoxonMethod::NormalApprox,
    })
}

/// Scores of one metric over a test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    /// `(example_id, score)`; empty for corpus-level metrics.
    pub per_example: Vec<(String, f64)>,
    pub aggregate: f64,
    pub count: usize,
}

impl MetricReport {
    /// Sentence-level report; the aggregate is the arithmetic mean.
    pub fn sentence_level(metric: &str, per_example: Vec<(String, f64)>) -> Result<Self> {
        if per_example.is_empty() {
            return Err(Error::Metric(format!("{metric}: no examples")));
        }
        let aggregate = per_example.iter().map(|(_, s)| s).sum::<f64>() / per_example.len() as f64;
        Ok(Self {
            metric: metric.into(),
            count: per_example.len(),
            per_example,
            aggregate,
        })
    }

    pub fn corpus_level(metric: &str, value: f64, count: usize) -> Self {
        Self {
            metric: metric.into(),
            per_example: Vec::new(),
            aggregate: value,
            count,
        }
    }
}

/// CSV `example_id,metric,score` over all sentence-level reports.
pub fn write_reports_csv<W: Write>(mut w: W, reports: &[MetricReport]) -> Result<()> {
    writeln!(w, "example_id,metric,score")?;
    for r in reports {
        for (id, s) in &r.per_example {
            writeln!(w, "{},{},{}", csv_field(id), r.metric, s)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// JSON summary `{metric: {aggregate, count}}`.
pub fn reports_summary(reports: &[MetricReport]) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for r in reports {
        map.insert(
            r.metric.clone(),
            serde_json::json!({ "aggregate": r.aggregate, "count": r.count }),
        );
    }
    serde_json::Value::Object(map)
}
