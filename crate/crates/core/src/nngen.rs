//! Nearest-neighbour commit message retrieval over bag-of-words diff vectors.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CommitRecord;
use crate::diff::{serialize_change, Patch};
use crate::error::{Error, Result};
use crate::metrics::bleu_bnorm;
use crate::tokens::{SpecialToken, Vocabulary};

/// Sparse count vector sorted by token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowVector {
    pub counts: Vec<(u32, f64)>,
    pub norm: f64,
}

impl BowVector {
    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for id in ids {
            if id as usize >= SpecialToken::COUNT {
                *map.entry(id).or_default() += 1.0;
            }
        }
        let counts: Vec<(u32, f64)> = map.into_iter().collect();
        let norm = counts.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
        Self { counts, norm }
    }

    pub fn count(&self, id: u32) -> f64 {
        self.counts
            .binary_search_by_key(&id, |(i, _)| *i)
            .map(|p| self.counts[p].1)
            .unwrap_or(0.0)
    }

    pub fn dot(&self, other: &BowVector) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < self.counts.len() && j < other.counts.len() {
            let (a, b) = (self.counts[i], other.counts[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    /// Cosine similarity; 0 if either vector is zero.
    pub fn cosine(&self, other: &BowVector) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        self.dot(other) / (self.norm * other.norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub record_id: String,
    pub message: String,
    pub vector: BowVector,
    /// Code tokens of the diff, used for re-ranking.
    pub diff_tokens: Vec<String>,
}

/// Index over training diffs, entries sorted by record id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BowIndex {
    pub entries: Vec<IndexEntry>,
}

/// Code tokens (markers excluded) of a diff.
pub fn diff_code_tokens(patch: &Patch) -> Vec<String> {
    serialize_change(patch).code_tokens().cloned().collect()
}

pub fn diff_vector(patch: &Patch, vocab: &Vocabulary) -> BowVector {
    BowVector::from_ids(vocab.encode(&diff_code_tokens(patch)))
}

pub fn build_index(records: &[CommitRecord], vocab: &Vocabulary) -> BowIndex {
    let mut entries: Vec<IndexEntry> = records
        .par_iter()
        .filter_map(|r| {
            let patch = match r.patch() {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("nngen: record {} skipped: {e}", r.id);
                    return None;
                }
            };
            let diff_tokens = diff_code_tokens(&patch);
            let vector = BowVector::from_ids(vocab.encode(&diff_tokens));
            if vector.norm == 0.0 {
                log::warn!("nngen: record {} has an empty bag of words", r.id);
                return None;
            }
            Some(IndexEntry {
                record_id: r.id.clone(),
                message: r.message.clone(),
                vector,
                diff_tokens,
            })
        })
        .collect();
    entries.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    BowIndex { entries }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub record_id: String,
    pub message: String,
    pub cosine: f64,
}

impl BowIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices ranked by cosine, ties by record id.
    fn ranked(&self, query: &BowVector, k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> =
            self.entries.iter().enumerate().map(|(i, e)| (i, query.cosine(&e.vector))).collect();
        // entries are id-sorted, so a stable sort keeps the id tie-break
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        scored
    }

    /// Best match for a query vector and its code tokens. With `k > 1` the
    /// top-k cosine candidates are re-ranked by B-Norm against the query diff.
    pub fn retrieve_vector(&self, query: &BowVector, query_tokens: &[String], k: usize) -> Result<Retrieved> {
        if self.is_empty() {
            return Err(Error::Dataset("retrieval from an empty index".into()));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let top = self.ranked(query, k);
        let (best, cos) = if k == 1 || query_tokens.is_empty() {
            top[0]
        } else {
            let mut best = top[0];
            let mut best_bleu = f64::NEG_INFINITY;
            for &(i, c) in &top {
                let b = bleu_bnorm(&self.entries[i].diff_tokens, query_tokens).unwrap_or(0.0);
                if b > best_bleu {
                    best_bleu = b;
                    best = (i, c);
                }
            }
            best
        };
        let e = &self.entries[best];
        Ok(Retrieved {
            record_id: e.record_id.clone(),
            message: e.message.clone(),
            cosine: cos,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str::<IndexEntry>(&line)?);
            }
        }
        entries.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        Ok(Self { entries })
    }
}

/// Message of the training diff most similar to `test_diff`.
pub fn retrieve(test_diff: &Patch, index: &BowIndex, vocab: &Vocabulary, k: usize) -> Result<Retrieved> {
    let tokens = diff_code_tokens(test_diff);
    let v = BowVector::from_ids(vocab.encode(&tokens));
    index.retrieve_vector(&v, &tokens, k)
}
