//! Builds one sample per pre-training objective for a single commit.

use cctforge::corpus::corpus_vocabulary;
use cctforge::sampler::{PretrainTask, Sampler, SamplerConfig};
use cctforge::synthetic::{generate, SyntheticConfig};

fn main() -> cctforge::Result<()> {
    let corpus = generate(&SyntheticConfig {
        records: 20,
        seed: 3,
        ..Default::default()
    });
    let vocab = corpus_vocabulary(&corpus.records, 1)?;
    let sampler = Sampler::new(SamplerConfig::default(), &vocab)?;
    let record = &corpus.records[0];
    let patch = record.patch()?;
    println!("message: {}\n", record.message);
    for task in PretrainTask::ALL {
        let s = sampler.make(task, record, &patch, 11)?;
        println!("[{task}]");
        println!("  input:  {}", s.input_tokens.join(" "));
        println!("  target: {}", s.target_tokens.join(" "));
    }
    let epoch = sampler.build_epoch(&corpus.records, 11);
    let order: Vec<String> = epoch.iter().take(10).map(|s| s.task.to_string()).collect();
    println!("\nepoch of {} samples, first tasks: {}", epoch.len(), order.join(", "));
    Ok(())
}
