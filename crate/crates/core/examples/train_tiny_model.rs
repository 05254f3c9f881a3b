//! Pre-trains a desk-sized model on a synthetic corpus and decodes a message.

use cctforge::corpus::corpus_vocabulary;
use cctforge::model::{greedy_decode, input_ids, pretrain, strip_eos, ModelConfig, ModelParams, PretrainOptions, TrainConfig};
use cctforge::sampler::SamplerConfig;
use cctforge::synthetic::{generate, SyntheticConfig};
use cctforge::diff::serialize_change;

fn main() -> cctforge::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let corpus = generate(&SyntheticConfig {
        records: 200,
        seed: 1,
        ..Default::default()
    });
    let vocab = corpus_vocabulary(&corpus.records, 1)?;
    let params = ModelParams::init(ModelConfig::desk(vocab.len()), 0)?;
    println!("{} parameters, vocabulary {}", params.num_scalars(), vocab.len());
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        max_steps: steps,
        seed: 0,
    };
    let out = pretrain(params, &corpus.records, &vocab, SamplerConfig::default(), cfg, &PretrainOptions::default())?;
    let losses = out.trace.combined();
    for (i, l) in losses.iter().enumerate().step_by((steps / 10).max(1)) {
        println!("step {i:>5}  loss {l:>10.3}");
    }
    let r = &corpus.records[0];
    let input = input_ids(&serialize_change(&r.patch()?).tokens, &vocab);
    let ids = greedy_decode(&out.params, &input, 32)?;
    println!("\nreference: {}\ndecoded:   {}", r.message, vocab.decode(strip_eos(&ids))?.join(" "));
    Ok(())
}
