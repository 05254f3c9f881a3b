//! Fine-tunes a model on comment updating and reports GLEU and accuracy.

use cctforge::corpus::corpus_vocabulary;
use cctforge::model::{ModelConfig, ModelParams};
use cctforge::synthetic::{generate, SyntheticConfig};
use cctforge::tasks::{build_task_dataset, evaluate_task, finetune, split_dataset, DownstreamTask, FinetuneConfig, SplitSpec};

fn main() -> cctforge::Result<()> {
    let task = DownstreamTask::CommentUpdate;
    let corpus = generate(&SyntheticConfig {
        records: 300,
        seed: 9,
        ..Default::default()
    });
    let vocab = corpus_vocabulary(&corpus.records, 1)?;
    let splits = split_dataset(&corpus.records, &SplitSpec::by_timestamp())?;
    let train = build_task_dataset(&splits.train, task).items;
    let valid = build_task_dataset(&splits.valid, task).items;
    let test = build_task_dataset(&splits.test, task).items;
    println!("train {} / valid {} / test {}", train.len(), valid.len(), test.len());

    let params = ModelParams::init(ModelConfig::desk(vocab.len()), 0)?;
    let before = evaluate_task(&params, task, &test, &vocab)?;
    let mut cfg = FinetuneConfig::for_task(task);
    cfg.train.learning_rate = 1e-3;
    cfg.train.max_steps = 300;
    let out = finetune(params, task, &train, &valid, &vocab, &cfg)?;
    let after = evaluate_task(&out.params, task, &test, &vocab)?;
    for (name, e) in [("random init", &before), ("fine-tuned", &after)] {
        println!(
            "{name:<12} GLEU {:>7.3}  accuracy {:.3}",
            e.metric("gleu").unwrap_or(f64::NAN),
            e.metric("accuracy").unwrap_or(f64::NAN)
        );
    }
    if let Some(p) = after.predictions.first() {
        println!("\nexample output: {}", p.output.clone().unwrap_or_default().join(" "));
    }
    Ok(())
}
