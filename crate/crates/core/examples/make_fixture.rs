//! Writes a synthetic commit corpus as JSONL.
//!
//! cargo run --example make_fixture -- out.jsonl [records] [seed]

use std::fs::File;
use std::io::BufWriter;

use cctforge::corpus::write_records;
use cctforge::synthetic::{generate, SyntheticConfig};

fn main() -> cctforge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().map(String::as_str).unwrap_or("corpus.jsonl");
    let records = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2024);
    let corpus = generate(&SyntheticConfig {
        records,
        seed,
        plant_rate: 0.01,
        with_labels: true,
    });
    write_records(BufWriter::new(File::create(path)?), &corpus.records)?;
    println!("{} records ({} planted violations) -> {path}", corpus.records.len(), corpus.planted.len());
    Ok(())
}
