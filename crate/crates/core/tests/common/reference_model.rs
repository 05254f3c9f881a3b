//! Naive float64 forward pass of the encoder-decoder, written with plain
//! nested loops and looking parameters up by name.

use cctforge::model::ModelParams;
use cctforge::tokens::SpecialToken;

type Mat = Vec<Vec<f64>>;

const PAD: u32 = SpecialToken::Pad as u32;

pub struct Reference<'a> {
    p: &'a ModelParams,
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

impl<'a> Reference<'a> {
    pub fn new(p: &'a ModelParams) -> Self {
        Self { p }
    }

    fn mat(&self, name: &str) -> Mat {
        let t = self.p.tensor(name).unwrap_or_else(|| panic!("missing tensor {name}"));
        (0..t.rows).map(|r| t.row(r).to_vec()).collect()
    }

    fn vec(&self, name: &str) -> Vec<f64> {
        self.p.tensor(name).unwrap().data.clone()
    }

    fn linear(&self, x: &Mat, prefix: &str) -> Mat {
        let w = self.mat(&format!("{prefix}.weight"));
        let b = self.vec(&format!("{prefix}.bias"));
        x.iter()
            .map(|row| {
                (0..b.len())
                    .map(|j| b[j] + (0..row.len()).map(|k| row[k] * w[k][j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn norm(&self, x: &Mat, prefix: &str) -> Mat {
        let g = self.vec(&format!("{prefix}.gain"));
        let b = self.vec(&format!("{prefix}.bias"));
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = (var + 1e-5).sqrt();
                row.iter().enumerate().map(|(i, v)| g[i] * (v - mean) / sd + b[i]).collect()
            })
            .collect()
    }

    fn attention(&self, xq: &Mat, xkv: &Mat, prefix: &str, key_ok: &[bool], causal: bool) -> Mat {
        let heads = self.p.config.num_heads;
        let q = self.linear(xq, &format!("{prefix}.q"));
        let k = self.linear(xkv, &format!("{prefix}.k"));
        let v = self.linear(xkv, &format!("{prefix}.v"));
        let d = q[0].len();
        let dk = d / heads;
        let mut out = vec![vec![0.0; d]; q.len()];
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..q.len() {
                let visible: Vec<usize> = (0..k.len()).filter(|&j| key_ok[j] && (!causal || j <= i)).collect();
                if visible.is_empty() {
                    continue;
                }
                let scores: Vec<f64> = visible
                    .iter()
                    .map(|&j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (&j, s) in visible.iter().zip(&scores) {
                    let w = (s - m).exp() / z;
                    for c in cols.clone() {
                        out[i][c] += w * v[j][c];
                    }
                }
            }
        }
        self.linear(&out, &format!("{prefix}.o"))
    }

    fn ff(&self, x: &Mat, prefix: &str) -> Mat {
        let w1 = self.mat(&format!("{prefix}.w1"));
        let b1 = self.vec(&format!("{prefix}.b1"));
        let w2 = self.mat(&format!("{prefix}.w2"));
        let b2 = self.vec(&format!("{prefix}.b2"));
        x.iter()
            .map(|row| {
                let h: Vec<f64> = (0..b1.len())
                    .map(|j| gelu(b1[j] + (0..row.len()).map(|k| row[k] * w1[k][j]).sum::<f64>()))
                    .collect();
                (0..b2.len()).map(|j| b2[j] + (0..h.len()).map(|k| h[k] * w2[k][j]).sum::<f64>()).collect()
            })
            .collect()
    }

    fn embed(&self, ids: &[u32], pos: &str) -> Mat {
        let e = self.mat("embed");
        let p = self.mat(pos);
        ids.iter()
            .enumerate()
            .map(|(i, &id)| e[id as usize].iter().zip(&p[i]).map(|(a, b)| a + b).collect())
            .collect()
    }

    pub fn encode(&self, ids: &[u32]) -> Mat {
        let ok: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        let mut x = self.embed(ids, "encoder.pos");
        for l in 0..self.p.config.num_layers {
            let h = self.norm(&x, &format!("encoder.{l}.ln_attn"));
            x = add(&x, &self.attention(&h, &h, &format!("encoder.{l}.attn"), &ok, false));
            let h = self.norm(&x, &format!("encoder.{l}.ln_ff"));
            x = add(&x, &self.ff(&h, &format!("encoder.{l}.ff")));
        }
        self.norm(&x, "encoder.norm")
    }

    /// Logits for every decoder position given the decoder input ids.
    pub fn logits(&self, input: &[u32], dec_in: &[u32]) -> Mat {
        let enc = self.encode(input);
        let enc_ok: Vec<bool> = input.iter().map(|&i| i != PAD).collect();
        let dec_ok: Vec<bool> = dec_in.iter().map(|&i| i != PAD).collect();
        let mut y = self.embed(dec_in, "decoder.pos");
        for l in 0..self.p.config.num_layers {
            let h = self.norm(&y, &format!("decoder.{l}.ln_self"));
            y = add(&y, &self.attention(&h, &h, &format!("decoder.{l}.self_attn"), &dec_ok, true));
            let h = self.norm(&y, &format!("decoder.{l}.ln_cross"));
            y = add(&y, &self.attention(&h, &enc, &format!("decoder.{l}.cross_attn"), &enc_ok, false));
            let h = self.norm(&y, &format!("decoder.{l}.ln_ff"));
            y = add(&y, &self.ff(&h, &format!("decoder.{l}.ff")));
        }
        let y = self.norm(&y, "decoder.norm");
        let e = self.mat("embed");
        let bias = self.vec("lm_head.bias");
        y.iter()
            .map(|row| {
                (0..e.len())
                    .map(|v| bias[v] + row.iter().zip(&e[v]).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Teacher-forced negative log-likelihood of a framed target, with the
    /// log-softmax computed by direct summation.
    pub fn seq2seq_loss(&self, input: &[u32], framed: &[u32]) -> f64 {
        let dec_in = &framed[..framed.len() - 1];
        let logits = self.logits(input, dec_in);
        let mut loss = 0.0;
        for (t, &gold) in framed[1..].iter().enumerate() {
            if gold == PAD {
                continue;
            }
            let z: f64 = logits[t].iter().map(|l| l.exp()).sum();
            loss -= logits[t][gold as usize] - z.ln();
        }
        loss
    }

    pub fn classify(&self, input: &[u32]) -> f64 {
        let enc = self.encode(input);
        let w = self.vec("cls_head.weight");
        let b = self.vec("cls_head.bias")[0];
        let z = b + enc[0].iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }
}
