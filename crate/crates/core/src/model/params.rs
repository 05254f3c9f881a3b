use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shape of the encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, 2 heads, width 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            d_model: 64,
            d_ff: 128,
            vocab_size,
            max_src_len: 256,
            max_tgt_len: 128,
            dropout_rate: 0.0,
        }
    }

    /// T5-base shaped reference: 12 layers each side, 12 heads, width 768,
    /// feed-forward 3072, 32,100-entry vocabulary, 512 positions.
    pub fn reference() -> Self {
        Self {
            num_layers: 12,
            num_heads: 12,
            d_model: 768,
            d_ff: 3072,
            vocab_size: 32_100,
            max_src_len: 512,
            max_tgt_len: 512,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.max_src_len < 1 || self.max_tgt_len < 1 || self.d_model < 1 || self.d_ff < 1 {
            return Err(Error::Config("lengths and widths must be at least 1".into()));
        }
        if self.vocab_size < crate::tokens::SpecialToken::COUNT {
            return Err(Error::Config("vocab_size smaller than the special-token block".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FfIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerIdx {
    pub ln_attn: NormIdx,
    pub attn: AttnIdx,
    pub ln_ff: NormIdx,
    pub ff: FfIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerIdx {
    pub ln_self: NormIdx,
    pub self_attn: AttnIdx,
    pub ln_cross: NormIdx,
    pub cross_attn: AttnIdx,
    pub ln_ff: NormIdx,
    pub ff: FfIdx,
}

/// Index of every named tensor in [`ModelParams::tensors`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub enc_norm: NormIdx,
    pub decoder: Vec<DecoderLayerIdx>,
    pub dec_norm: NormIdx,
    pub out_bias: usize,
    pub cls_weight: usize,
    pub cls_bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with the given standard deviation.
    Normal(f64),
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let std = (d as f64).powf(-0.5);
        let mut pair = |n: &str| {
            (
                self.add(format!("{prefix}.{n}.weight"), d, d, Init::Normal(std)),
                self.add(format!("{prefix}.{n}.bias"), 1, d, Init::Zeros),
            )
        };
        let (wq, bq) = pair("q");
        let (wk, bk) = pair("k");
        let (wv, bv) = pair("v");
        let (wo, bo) = pair("o");
        AttnIdx {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, dff: usize) -> FfIdx {
        FfIdx {
            w1: self.add(format!("{prefix}.w1"), d, dff, Init::Normal((d as f64).powf(-0.5))),
            b1: self.add(format!("{prefix}.b1"), 1, dff, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), dff, d, Init::Normal((dff as f64).powf(-0.5))),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> (Layout, Vec<TensorSpec>) {
        let d = cfg.d_model;
        let emb_std = (d as f64).powf(-0.5);
        let mut b = LayoutBuilder { specs: Vec::new() };
        let embed = b.add("embed".into(), cfg.vocab_size, d, Init::Normal(emb_std));
        let enc_pos = b.add("encoder.pos".into(), cfg.max_src_len, d, Init::Normal(emb_std));
        let dec_pos = b.add("decoder.pos".into(), cfg.max_tgt_len, d, Init::Normal(emb_std));
        let encoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerIdx {
                    ln_attn: b.norm(&format!("{p}.ln_attn"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln_ff: b.norm(&format!("{p}.ln_ff"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.d_ff),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.norm", d);
        let decoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerIdx {
                    ln_self: b.norm(&format!("{p}.ln_self"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    ln_cross: b.norm(&format!("{p}.ln_cross"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                    ln_ff: b.norm(&format!("{p}.ln_ff"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.d_ff),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.norm", d);
        let out_bias = b.add("lm_head.bias".into(), 1, cfg.vocab_size, Init::Zeros);
        let cls_weight = b.add("cls_head.weight".into(), 1, d, Init::Zeros);
        let cls_bias = b.add("cls_head.bias".into(), 1, 1, Init::Zeros);
        (
            Layout {
                embed,
                enc_pos,
                dec_pos,
                encoder,
                enc_norm,
                decoder,
                dec_norm,
                out_bias,
                cls_weight,
                cls_bias,
            },
            b.specs,
        )
    }
}

/// Number of trainable scalars for a configuration.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let (_, specs) = Layout::new(cfg);
    specs.iter().map(|s| s.rows * s.cols).sum()
}

/// All trainable tensors. The output projection shares the token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Random initialization from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, specs) = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::Ones => Tensor::filled(s.rows, s.cols, 1.0),
                Init::Zeros => Tensor::zeros(s.rows, s.cols),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    Tensor::from_vec(
                        s.rows,
                        s.cols,
                        (0..s.rows * s.cols).map(|_| dist.sample(&mut rng)).collect(),
                    )
                }
            })
            .collect();
        Ok(Self {
            config,
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config).0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }
}
