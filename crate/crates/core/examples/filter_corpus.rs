//! Filters a synthetic corpus with planted violations and prints statistics.

use std::collections::BTreeMap;

use cctforge::corpus::{corpus_stats, filter_records, FilterConfig};
use cctforge::synthetic::{generate, SyntheticConfig, EXCLUDED_PROJECT};

fn main() {
    let corpus = generate(&SyntheticConfig {
        records: 1000,
        seed: 7,
        plant_rate: 0.03,
        with_labels: false,
    });
    let mut cfg = FilterConfig::default();
    cfg.excluded_projects.insert(EXCLUDED_PROJECT.to_string());

    let (kept, rejected) = filter_records(corpus.records.clone(), &cfg);
    let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
    for (_, why) in &rejected {
        *by_reason.entry(format!("{why:?}")).or_default() += 1;
    }
    println!("kept {} / {}", kept.len(), corpus.records.len());
    for (why, n) in &by_reason {
        println!("  {why:<16} {n}");
    }
    let exact = rejected.iter().all(|(id, why)| corpus.planted.get(id) == Some(why))
        && rejected.len() == corpus.planted.len();
    println!("rejections match planted violations: {exact}");

    let stats = corpus_stats(&kept);
    println!("\n{:<12} {:>8} {:>8} {:>10}", "language", "projects", "commits", "bytes");
    for (lang, row) in stats.rows() {
        println!("{lang:<12} {:>8} {:>8} {:>10}", row.project_count, row.commit_count, row.byte_size);
    }
}
