mod common;

use cctforge::corpus::corpus_vocabulary;
use cctforge::diff::{group_by_markers, serialize_change_with_message, LineKind};
use cctforge::sampler::{
    epoch_seed, perturb_message, rng_for, sample_seed, write_samples, MaskBranch, PretrainSample, PretrainTask,
    Sampler, SamplerConfig,
};
use cctforge::tokens::{tokenize, SpecialToken};
use common::*;

const MASK: &str = "[MASK]";
const MSG: &str = "[MSG]";

/// Indices of diff lines whose code was replaced by `[MASK]`.
fn masked_lines(input: &[String]) -> Vec<usize> {
    let end = input.iter().position(|t| t == MSG).unwrap_or(input.len());
    group_by_markers(&input[..end])
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, (_, toks))| toks.len() == 1 && toks[0] == MASK)
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn mlm4cc_line_frequency() {
    let rec = twenty_line_record();
    let patch = rec.patch().unwrap();
    assert_eq!(patch.line_count(), 20);
    let vocab = corpus_vocabulary(std::slice::from_ref(&rec), 1).unwrap();
    let sampler = Sampler::new(SamplerConfig::default(), &vocab).unwrap();
    let draws = 10_000;
    let mut hits = [0usize; 20];
    for seed in 0..draws {
        let s = sampler.make(PretrainTask::Mlm4cc, &rec, &patch, seed).unwrap();
        let m = masked_lines(&s.input_tokens);
        assert_eq!(m.len(), 3);
        for i in m {
            hits[i] += 1;
        }
    }
    assert_eq!(hits.iter().sum::<usize>(), 3 * draws as usize);
    // five binomial standard deviations per line
    let sd = (0.15f64 * 0.85 / draws as f64).sqrt();
    for (i, h) in hits.iter().enumerate() {
        let f = *h as f64 / draws as f64;
        assert!((f - 0.15).abs() <= 5.0 * sd, "line {i}: {f}");
    }
}

#[test]
fn mlm4cm_branch_frequency() {
    let rec = twenty_line_record();
    let patch = rec.patch().unwrap();
    let vocab = corpus_vocabulary(std::slice::from_ref(&rec), 1).unwrap();
    let cfg = SamplerConfig::default();
    let sampler = Sampler::new(cfg.clone(), &vocab).unwrap();
    let msg = tokenize(&rec.message);
    let mut counts = [0usize; 3];
    let mut total = 0;
    let mut seed = 0;
    while total < 100_000 {
        let sample = sampler.mlm4cm(&rec, &patch, seed).unwrap();
        let mut perturbed = msg.clone();
        let picks = perturb_message(&mut perturbed, &cfg, &vocab, &mut rng_for(seed)).unwrap();
        let at = sample.input_tokens.iter().position(|t| t == MSG).unwrap();
        assert_eq!(sample.input_tokens[at + 1..], perturbed[..]);
        for (pos, b) in picks {
            match b {
                MaskBranch::Mask => {
                    assert_eq!(perturbed[pos], MASK);
                    counts[0] += 1
                }
                MaskBranch::Random => counts[1] += 1,
                MaskBranch::Keep => {
                    assert_eq!(perturbed[pos], msg[pos]);
                    counts[2] += 1
                }
            }
            total += 1;
        }
        seed += 1;
    }
    let f: Vec<f64> = counts.iter().map(|c| *c as f64 / total as f64).collect();
    for (got, want) in f.iter().zip([0.8, 0.1, 0.1]) {
        assert!((got - want).abs() <= 0.005, "{f:?}");
    }
}

/// Replaces each `[marker] [MASK]` pair by the next target line.
fn fill_masked_lines(input: &[String], target: &[String]) -> Vec<String> {
    let mut lines = group_by_markers(target).unwrap().into_iter();
    let mut out = Vec::new();
    let mut i = 0;
    while i < input.len() {
        if LineKind::from_marker(&input[i]).is_some() && input.get(i + 1).is_some_and(|t| t == MASK) {
            let (kind, toks) = lines.next().expect("target line for every mask");
            assert_eq!(kind.marker().as_str(), input[i]);
            out.push(input[i].clone());
            out.extend(toks);
            i += 2;
        } else {
            out.push(input[i].clone());
            i += 1;
        }
    }
    assert!(lines.next().is_none());
    out
}

#[test]
fn samples_on_random_records() {
    let records = clean_corpus(500, 31);
    let vocab = corpus_vocabulary(&records, 1).unwrap();
    let cfg = SamplerConfig::default();
    let sampler = Sampler::new(cfg.clone(), &vocab).unwrap();
    for rec in &records {
        let patch = rec.patch().unwrap();
        let full = serialize_change_with_message(&patch, &rec.message);
        let adds = patch.lines().filter(|l| l.kind == LineKind::Add).count();
        for s in sampler.record_samples(rec, 9) {
            assert_eq!(s.input_tokens[0], SpecialToken::Cls.as_str());
            assert!(!s.target_tokens.is_empty());
            assert!(!s.input_tokens.iter().chain(&s.target_tokens).any(|t| t == "[PAD]"));
            assert_eq!(s.seed, sample_seed(9, &rec.id, s.task));
            match s.task {
                PretrainTask::Mlm4cc => {
                    assert_eq!(fill_masked_lines(&s.input_tokens, &s.target_tokens), full);
                }
                PretrainTask::Nl2pl => {
                    assert_eq!(masked_lines(&s.input_tokens).len(), adds);
                    assert_eq!(fill_masked_lines(&s.input_tokens, &s.target_tokens), full);
                }
                PretrainTask::Pl2nl => {
                    assert!(!s.input_tokens.iter().any(|t| t == MSG));
                    assert_eq!(s.target_tokens, tokenize(&rec.message));
                }
                PretrainTask::Mlm4cm => {
                    let msg = tokenize(&rec.message);
                    let mut perturbed = msg.clone();
                    let picks = perturb_message(&mut perturbed, &cfg, &vocab, &mut rng_for(s.seed)).unwrap();
                    let at = s.input_tokens.iter().position(|t| t == MSG).unwrap();
                    assert_eq!(s.input_tokens[..at], full[..at]);
                    let mut restored = s.input_tokens.clone();
                    for ((pos, branch), t) in picks.iter().zip(&s.target_tokens) {
                        assert_eq!(t, &msg[*pos]);
                        if *branch == MaskBranch::Mask {
                            restored[at + 1 + pos] = t.clone();
                        }
                    }
                    let mask_left = restored.iter().any(|t| t == MASK);
                    assert!(!mask_left || msg.iter().any(|t| t == MASK));
                }
                PretrainTask::Cdg => {}
            }
        }
    }
}

fn sorted_jsonl(mut samples: Vec<PretrainSample>) -> Vec<u8> {
    samples.sort_by(|a, b| (&a.record_id, a.task).cmp(&(&b.record_id, b.task)));
    let mut buf = Vec::new();
    write_samples(&mut buf, &samples).unwrap();
    buf
}

#[test]
fn epochs_are_reproducible_and_order_independent() {
    let records = clean_corpus(120, 4);
    let vocab = corpus_vocabulary(&records, 1).unwrap();
    let sampler = Sampler::new(SamplerConfig::default(), &vocab).unwrap();
    let a = sampler.build_epoch(&records, 7);
    let b = sampler.build_epoch(&records, 7);
    assert_eq!(a, b);
    let per_record: usize = records.iter().map(|r| sampler.record_samples(r, 7).len()).sum();
    assert_eq!(a.len(), per_record);
    assert!(a.len() > 120 * 4);
    let mut reversed = records.clone();
    reversed.reverse();
    assert_eq!(sorted_jsonl(sampler.build_epoch(&reversed, 7)), sorted_jsonl(a.clone()));

    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let c = pool.install(|| sampler.build_epoch(&records, 7));
    assert_eq!(c, a);
    assert_ne!(sampler.build_epoch(&records, epoch_seed(7, 1)), a);
}

#[test]
fn ablated_epoch_has_no_excluded_task() {
    let records = clean_corpus(50, 6);
    let vocab = corpus_vocabulary(&records, 1).unwrap();
    let sampler = Sampler::new(SamplerConfig::default().without(PretrainTask::Pl2nl), &vocab).unwrap();
    let epoch = sampler.build_epoch(&records, 0);
    assert!(epoch.iter().all(|s| s.task != PretrainTask::Pl2nl));
    let full = Sampler::new(SamplerConfig::default(), &vocab).unwrap().build_epoch(&records, 0);
    let mut kept: Vec<&PretrainSample> = full.iter().filter(|s| s.task != PretrainTask::Pl2nl).collect();
    let mut got: Vec<&PretrainSample> = epoch.iter().collect();
    let key = |s: &&PretrainSample| (s.record_id.clone(), s.task);
    kept.sort_by_key(key);
    got.sort_by_key(key);
    assert_eq!(got, kept);
}
