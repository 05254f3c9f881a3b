//! Forward passes of the pre-LN encoder-decoder, losses and decoding.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::autograd::{AttnMask, Tape, Var};
use super::params::{AttnIdx, FfIdx, Layout, ModelConfig, ModelParams, NormIdx};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::sampler::PretrainTask;
use crate::tokens::SpecialToken;

static TRUNCATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of over-length inputs or targets truncated so far in this process.
pub fn truncation_count() -> usize {
    TRUNCATIONS.load(Ordering::Relaxed)
}

const PAD: u32 = SpecialToken::Pad as u32;
const BOS: u32 = SpecialToken::Bos as u32;
const EOS: u32 = SpecialToken::Eos as u32;

struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    fn apply(&mut self, t: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let n = t.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        t.mul_const(x, mask)
    }
}

struct Net<'a> {
    cfg: &'a ModelConfig,
    layout: Layout,
}

impl<'a> Net<'a> {
    fn new(params: &'a ModelParams) -> Self {
        Self {
            cfg: &params.config,
            layout: params.layout(),
        }
    }

    fn norm(&self, t: &mut Tape, x: Var, idx: NormIdx) -> Var {
        let (g, b) = (t.param(idx.gain), t.param(idx.bias));
        t.layer_norm(x, g, b)
    }

    fn attn(&self, t: &mut Tape, idx: &AttnIdx, xq: Var, xkv: Var, mask: &AttnMask) -> Var {
        let lin = |t: &mut Tape, x: Var, w: usize, b: usize| {
            let (w, b) = (t.param(w), t.param(b));
            t.linear(x, w, b)
        };
        let q = lin(t, xq, idx.wq, idx.bq);
        let k = lin(t, xkv, idx.wk, idx.bk);
        let v = lin(t, xkv, idx.wv, idx.bv);
        let a = t.attention(q, k, v, self.cfg.num_heads, mask);
        lin(t, a, idx.wo, idx.bo)
    }

    fn ff(&self, t: &mut Tape, idx: &FfIdx, x: Var) -> Var {
        let (w1, b1, w2, b2) = (t.param(idx.w1), t.param(idx.b1), t.param(idx.w2), t.param(idx.b2));
        let h = t.linear(x, w1, b1);
        let h = t.gelu(h);
        t.linear(h, w2, b2)
    }

    fn embed(&self, t: &mut Tape, ids: &[u32], pos_table: usize, drop: &mut Dropout) -> Var {
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let table = t.param(self.layout.embed);
        let tok = t.embed(table, &ids);
        let pos = t.param(pos_table);
        let pos = t.take_rows(pos, ids.len());
        let x = t.add(tok, pos);
        drop.apply(t, x)
    }

    /// Encoder output after the final norm, `len x d_model`.
    fn encode(&self, t: &mut Tape, ids: &[u32], valid: &[bool], drop: &mut Dropout) -> Var {
        let mut x = self.embed(t, ids, self.layout.enc_pos, drop);
        let mask = AttnMask {
            causal: false,
            key_valid: Some(valid.to_vec()),
        };
        for layer in &self.layout.encoder {
            let h = self.norm(t, x, layer.ln_attn);
            let a = self.attn(t, &layer.attn, h, h, &mask);
            let a = drop.apply(t, a);
            x = t.add(x, a);
            let h = self.norm(t, x, layer.ln_ff);
            let f = self.ff(t, &layer.ff, h);
            let f = drop.apply(t, f);
            x = t.add(x, f);
        }
        self.norm(t, x, self.layout.enc_norm)
    }

    /// Decoder logits, `dec_len x vocab`.
    fn decode(
        &self,
        t: &mut Tape,
        enc: Var,
        enc_valid: &[bool],
        dec_ids: &[u32],
        drop: &mut Dropout,
    ) -> Var {
        let mut y = self.embed(t, dec_ids, self.layout.dec_pos, drop);
        let self_mask = AttnMask {
            causal: true,
            key_valid: Some(dec_ids.iter().map(|&i| i != PAD).collect()),
        };
        let cross_mask = AttnMask {
            causal: false,
            key_valid: Some(enc_valid.to_vec()),
        };
        for layer in &self.layout.decoder {
            let h = self.norm(t, y, layer.ln_self);
            let a = self.attn(t, &layer.self_attn, h, h, &self_mask);
            let a = drop.apply(t, a);
            y = t.add(y, a);
            let h = self.norm(t, y, layer.ln_cross);
            let c = self.attn(t, &layer.cross_attn, h, enc, &cross_mask);
            let c = drop.apply(t, c);
            y = t.add(y, c);
            let h = self.norm(t, y, layer.ln_ff);
            let f = self.ff(t, &layer.ff, h);
            let f = drop.apply(t, f);
            y = t.add(y, f);
        }
        let y = self.norm(t, y, self.layout.dec_norm);
        let table = t.param(self.layout.embed);
        let logits = t.matmul_bt(y, table);
        let bias = t.param(self.layout.out_bias);
        t.add_row(logits, bias)
    }

    fn cls_logit(&self, t: &mut Tape, enc: Var) -> Var {
        let cls = t.row(enc, 0);
        let w = t.param(self.layout.cls_weight);
        let z = t.matmul_bt(cls, w);
        let b = t.param(self.layout.cls_bias);
        t.add(z, b)
    }
}

fn check_ids(cfg: &ModelConfig, ids: &[u32]) -> Result<()> {
    if let Some(bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(Error::Model(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    Ok(())
}

/// Validates an encoder input and truncates it to `max_src_len`.
fn prepare_input<'i>(cfg: &ModelConfig, ids: &'i [u32]) -> Result<&'i [u32]> {
    if ids.is_empty() {
        return Err(Error::Model("empty encoder input".into()));
    }
    if ids[0] != SpecialToken::Cls.id() {
        return Err(Error::Model("encoder input must start with [CLS]".into()));
    }
    check_ids(cfg, ids)?;
    if ids.len() > cfg.max_src_len {
        TRUNCATIONS.fetch_add(1, Ordering::Relaxed);
        log::warn!("input of {} tokens truncated to {}", ids.len(), cfg.max_src_len);
        return Ok(&ids[..cfg.max_src_len]);
    }
    Ok(ids)
}

/// Wraps target ids as `[BOS] ... [EOS]`, truncating the body so the decoder
/// input fits `max_tgt_len` positions.
pub fn frame_target(ids: &[u32], max_tgt_len: usize) -> Vec<u32> {
    let keep = ids.len().min(max_tgt_len.saturating_sub(1));
    if keep < ids.len() {
        TRUNCATIONS.fetch_add(1, Ordering::Relaxed);
        log::warn!("target of {} tokens truncated to {}", ids.len(), keep);
    }
    let mut out = Vec::with_capacity(keep + 2);
    out.push(BOS);
    out.extend_from_slice(&ids[..keep]);
    out.push(EOS);
    out
}

/// Encoder states and the `[CLS]` representation.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub hidden: Tensor,
    pub cls: Vec<f64>,
}

/// Encodes `input_ids`; `[PAD]` positions are hidden from attention.
pub fn encode(params: &ModelParams, input_ids: &[u32]) -> Result<Encoded> {
    let ids = prepare_input(&params.config, input_ids)?;
    let valid: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    encode_masked(params, ids, &valid)
}

/// Encodes with an explicit key mask (`false` = ignored position).
pub fn encode_masked(params: &ModelParams, input_ids: &[u32], valid: &[bool]) -> Result<Encoded> {
    let ids = prepare_input(&params.config, input_ids)?;
    let valid = &valid[..ids.len()];
    let net = Net::new(params);
    let mut t = Tape::new(&params.tensors);
    let enc = net.encode(&mut t, ids, valid, &mut Dropout::off());
    let hidden = t.value(enc).clone();
    let cls = hidden.row(0).to_vec();
    Ok(Encoded { hidden, cls })
}

/// Attention probabilities of every encoder layer (`heads x len x len` each).
pub fn encoder_attention(params: &ModelParams, input_ids: &[u32]) -> Result<Vec<Vec<f64>>> {
    let ids = prepare_input(&params.config, input_ids)?;
    let valid: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    let net = Net::new(params);
    let mut t = Tape::new(&params.tensors);
    let mut drop = Dropout::off();
    let mut x = net.embed(&mut t, ids, net.layout.enc_pos, &mut drop);
    let mask = AttnMask {
        causal: false,
        key_valid: Some(valid),
    };
    for layer in &net.layout.encoder {
        let h = net.norm(&mut t, x, layer.ln_attn);
        let a = net.attn(&mut t, &layer.attn, h, h, &mask);
        x = t.add(x, a);
        let h = net.norm(&mut t, x, layer.ln_ff);
        let f = net.ff(&mut t, &layer.ff, h);
        x = t.add(x, f);
    }
    Ok(t.attention_maps().into_iter().map(<[f64]>::to_vec).collect())
}

/// What an example is trained to produce.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Framed `[BOS] ... [EOS]` ids.
    Sequence(Vec<u32>),
    /// Binary label for the `[CLS]` head.
    Label(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<u32>,
    pub target: Target,
    /// Pre-training objective the example belongs to, if any.
    pub task: Option<PretrainTask>,
}

impl Example {
    pub fn seq2seq(input: Vec<u32>, framed_target: Vec<u32>, task: Option<PretrainTask>) -> Self {
        Self {
            input,
            target: Target::Sequence(framed_target),
            task,
        }
    }

    pub fn label(input: Vec<u32>, label: bool) -> Self {
        Self {
            input,
            target: Target::Label(label),
            task: None,
        }
    }

    /// Key used to group losses in reports.
    pub fn group(&self) -> String {
        match (&self.task, &self.target) {
            (Some(t), _) => t.to_string(),
            (None, Target::Sequence(_)) => "seq2seq".into(),
            (None, Target::Label(_)) => "classify".into(),
        }
    }
}

fn build_loss(net: &Net, t: &mut Tape, ex: &Example, drop: &mut Dropout) -> Result<Var> {
    let ids = prepare_input(net.cfg, &ex.input)?;
    let valid: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    let enc = net.encode(t, ids, &valid, drop);
    match &ex.target {
        Target::Sequence(framed) => {
            if framed.len() < 2 {
                return Err(Error::Model("target is empty after framing".into()));
            }
            check_ids(net.cfg, framed)?;
            let mut framed = framed.as_slice();
            if framed.len() - 1 > net.cfg.max_tgt_len {
                TRUNCATIONS.fetch_add(1, Ordering::Relaxed);
                framed = &framed[..net.cfg.max_tgt_len + 1];
            }
            let dec_in = &framed[..framed.len() - 1];
            let labels: Vec<Option<usize>> = framed[1..]
                .iter()
                .map(|&y| (y != PAD).then_some(y as usize))
                .collect();
            if labels.iter().all(Option::is_none) {
                return Err(Error::Model("target has no non-padding positions".into()));
            }
            let logits = net.decode(t, enc, &valid, dec_in, drop);
            Ok(t.cross_entropy(logits, &labels))
        }
        Target::Label(y) => {
            let z = net.cls_logit(t, enc);
            Ok(t.bce_with_logit(z, *y))
        }
    }
}

/// Loss of one example (teacher-forced token NLL sum, or binary cross-entropy).
pub fn example_loss(params: &ModelParams, ex: &Example) -> Result<f64> {
    let net = Net::new(params);
    let mut t = Tape::new(&params.tensors);
    let root = build_loss(&net, &mut t, ex, &mut Dropout::off())?;
    Ok(t.scalar(root))
}

/// Loss of one example and its gradient with respect to every parameter.
pub fn example_loss_grad(
    params: &ModelParams,
    ex: &Example,
    dropout_rng: Option<ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>)> {
    let net = Net::new(params);
    let mut t = Tape::new(&params.tensors);
    let mut drop = Dropout {
        rate: params.config.dropout_rate,
        rng: dropout_rng,
    };
    let root = build_loss(&net, &mut t, ex, &mut drop)?;
    let mut grads = params.zeros_like();
    t.backward(root, &mut grads);
    Ok((t.scalar(root), grads))
}

/// Sum over target positions of `-log p(gold)`, teacher-forced.
/// `framed_target` is `[BOS] ... [EOS]`; `[PAD]` positions are skipped.
pub fn seq2seq_loss(params: &ModelParams, input_ids: &[u32], framed_target: &[u32]) -> Result<f64> {
    example_loss(params, &Example::seq2seq(input_ids.to_vec(), framed_target.to_vec(), None))
}

/// Unweighted sum of per-task losses, with the per-task breakdown.
pub fn combined_pretrain_loss(
    params: &ModelParams,
    batch: &[Example],
) -> Result<(f64, BTreeMap<String, f64>)> {
    if batch.is_empty() {
        return Err(Error::Model("combined loss needs at least one example".into()));
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| example_loss(params, ex))
        .collect::<Result<_>>()?;
    let mut per_task: BTreeMap<String, f64> = BTreeMap::new();
    for (ex, l) in batch.iter().zip(&losses) {
        *per_task.entry(ex.group()).or_default() += l;
    }
    Ok((per_task.values().sum(), per_task))
}

/// Total loss, per-group breakdown and summed gradient of a batch.
pub struct BatchGrad {
    pub loss: f64,
    pub per_task: BTreeMap<String, f64>,
    pub grads: Vec<Tensor>,
}

/// Computes per-example gradients in parallel and sums them in example
/// order, so the result does not depend on the thread count.
pub fn batch_loss_grad(
    params: &ModelParams,
    batch: &[Example],
    dropout_seeds: Option<&[u64]>,
) -> Result<BatchGrad> {
    use rand::SeedableRng;
    let results: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let rng = dropout_seeds.map(|s| ChaCha8Rng::seed_from_u64(s[i]));
            example_loss_grad(params, ex, rng)
        })
        .collect::<Result<_>>()?;
    let mut grads = params.zeros_like();
    let mut per_task: BTreeMap<String, f64> = BTreeMap::new();
    for (ex, (l, g)) in batch.iter().zip(results) {
        *per_task.entry(ex.group()).or_default() += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    Ok(BatchGrad {
        loss: per_task.values().sum(),
        per_task,
        grads,
    })
}

/// Probability that the input belongs to the positive class.
pub fn classify(params: &ModelParams, input_ids: &[u32]) -> Result<f64> {
    let net = Net::new(params);
    let ids = prepare_input(&params.config, input_ids)?;
    let valid: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    let mut t = Tape::new(&params.tensors);
    let enc = net.encode(&mut t, ids, &valid, &mut Dropout::off());
    let z = net.cls_logit(&mut t, enc);
    Ok(1.0 / (1.0 + (-t.scalar(z)).exp()))
}

/// Greedy decoding from `[BOS]`. Returns generated ids including the final
/// `[EOS]` when one was produced. Ties go to the lowest id; `[PAD]` and
/// `[BOS]` are never emitted.
pub fn greedy_decode(params: &ModelParams, input_ids: &[u32], max_tgt_len: usize) -> Result<Vec<u32>> {
    let net = Net::new(params);
    let ids = prepare_input(&params.config, input_ids)?;
    let valid: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    let max_len = max_tgt_len.min(params.config.max_tgt_len);
    let enc_hidden = {
        let mut t = Tape::new(&params.tensors);
        let enc = net.encode(&mut t, ids, &valid, &mut Dropout::off());
        t.value(enc).clone()
    };
    let mut prefix = vec![BOS];
    let mut out = Vec::new();
    while out.len() < max_len {
        let mut t = Tape::new(&params.tensors);
        let enc = t.input(enc_hidden.clone());
        let logits = net.decode(&mut t, enc, &valid, &prefix, &mut Dropout::off());
        let lv = t.value(logits);
        let last = lv.row(lv.rows - 1);
        let mut best = None::<(usize, f64)>;
        for (id, &score) in last.iter().enumerate() {
            if id as u32 == PAD || id as u32 == BOS {
                continue;
            }
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((id, score));
            }
        }
        let next = best.expect("vocabulary has emit-able tokens").0 as u32;
        out.push(next);
        if next == EOS {
            break;
        }
        prefix.push(next);
    }
    Ok(out)
}

/// Drops a trailing `[EOS]` (and anything after it).
pub fn strip_eos(ids: &[u32]) -> &[u32] {
    match ids.iter().position(|&i| i == EOS) {
        Some(p) => &ids[..p],
        None => ids,
    }
}
