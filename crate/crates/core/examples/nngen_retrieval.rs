//! Retrieves commit messages for held-out diffs by bag-of-words cosine.

use cctforge::corpus::corpus_vocabulary;
use cctforge::metrics::bleu_bnorm;
use cctforge::nngen::{build_index, retrieve};
use cctforge::synthetic::{generate, SyntheticConfig};
use cctforge::tokens::tokenize;

fn main() -> cctforge::Result<()> {
    let corpus = generate(&SyntheticConfig {
        records: 400,
        seed: 5,
        ..Default::default()
    });
    let (train, test) = corpus.records.split_at(350);
    let vocab = corpus_vocabulary(train, 1)?;
    let index = build_index(train, &vocab);
    for k in [1, 5] {
        let mut total = 0.0;
        for r in test {
            let got = retrieve(&r.patch()?, &index, &vocab, k)?;
            total += bleu_bnorm(&tokenize(&got.message), &tokenize(&r.message))?;
        }
        println!("k={k}: mean B-Norm {:.2} over {} queries", total / test.len() as f64, test.len());
    }
    let q = &test[0];
    let got = retrieve(&q.patch()?, &index, &vocab, 1)?;
    println!("\nquery message:     {}\nretrieved ({:.3}): {}", q.message, got.cosine, got.message);
    Ok(())
}
