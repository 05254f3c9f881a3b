//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! A [`Tape`] borrows the parameter tensors; intermediate values are owned by
//! the tape. Fused kernels (layer norm, multi-head attention, cross-entropy)
//! carry their own hand-written backward passes; `grad_check` verifies them
//! against central finite differences.

use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which keys a query may attend to.
#[derive(Debug, Clone, Default)]
pub struct AttnMask {
    /// Query `i` only sees keys `0..=i`.
    pub causal: bool,
    /// `key_valid[j] == false` hides key `j` from every query.
    pub key_valid: Option<Vec<bool>>,
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    Bce {
        logit: Var,
        label: f64,
    },
    Sum(Vec<Var>),
    MulConst {
        x: Var,
        factor: Vec<f64>,
    },
    Row {
        x: Var,
        row: usize,
    },
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

struct Node {
    value: Value,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => &self.params[*i],
        }
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, idx: usize) -> Var {
        self.nodes.push(Node {
            value: Value::Param(idx),
            op: Op::Param(idx),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul shape mismatch");
        let (m, k, n) = (av.rows, av.cols, bv.cols);
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, 1.0, &av.data, (k as isize, 1), &bv.data, (n as isize, 1), 0.0, &mut out.data, (n as isize, 1));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T` where `b` is stored `n x k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_bt shape mismatch");
        let (m, k, n) = (av.rows, av.cols, bv.rows);
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, 1.0, &av.data, (k as isize, 1), &bv.data, (1, k as isize), 0.0, &mut out.data, (n as isize, 1));
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        let bv = self.value(b);
        assert_eq!((out.rows, out.cols), (bv.rows, bv.cols), "add shape mismatch");
        out.add_assign(bv);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.len(), out.cols, "add_row width mismatch");
        for i in 0..out.rows {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let h = self.matmul(x, weight);
        self.add_row(h, bias)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::from_vec(v.rows, v.cols, v.data.iter().map(|&x| gelu(x)).collect());
        self.push(out, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let (rows, n) = (xv.rows, xv.cols);
        let mut out = Tensor::zeros(rows, n);
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out.data[r * n + c] = g.data[c] * h + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Gathers rows of `table` (`vocab x d`).
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// First `n` rows of a positional table, as a gather.
    pub fn take_rows(&mut self, table: Var, n: usize) -> Var {
        let ids: Vec<usize> = (0..n).collect();
        self.embed(table, &ids)
    }

    /// Element-wise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, factor: Vec<f64>) -> Var {
        let v = self.value(x);
        assert_eq!(v.len(), factor.len());
        let out = Tensor::from_vec(v.rows, v.cols, v.data.iter().zip(&factor).map(|(a, b)| a * b).collect());
        self.push(out, Op::MulConst { x, factor })
    }

    pub fn row(&mut self, x: Var, row: usize) -> Var {
        let v = self.value(x);
        let out = Tensor::from_vec(1, v.cols, v.row(row).to_vec());
        self.push(out, Op::Row { x, row })
    }

    /// Scaled dot-product attention over `heads` heads. `q` is `m x d`,
    /// `k`/`v` are `n x d`. Rows with no visible key produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (m, d, n) = (qv.rows, qv.cols, kv.rows);
        assert_eq!(kv.cols, d);
        assert_eq!(vv.rows, n);
        assert_eq!(d % heads, 0, "d_model not divisible by heads");
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut probs = vec![0.0; heads * m * n];
        let mut out = Tensor::zeros(m, d);
        let ds = d as isize;
        for h in 0..heads {
            let off = h * dk;
            let p = &mut probs[h * m * n..(h + 1) * m * n];
            gemm(m, dk, n, scale, &qv.data[off..], (ds, 1), &kv.data[off..], (1, ds), 0.0, p, (n as isize, 1));
            for i in 0..m {
                let row = &mut p[i * n..(i + 1) * n];
                let visible = |j: usize| {
                    (!mask.causal || j <= i)
                        && mask.key_valid.as_ref().is_none_or(|kv| kv[j])
                };
                let mut mx = f64::NEG_INFINITY;
                for (j, s) in row.iter().enumerate() {
                    if visible(j) && *s > mx {
                        mx = *s;
                    }
                }
                if mx == f64::NEG_INFINITY {
                    row.iter_mut().for_each(|x| *x = 0.0);
                    continue;
                }
                let mut sum = 0.0;
                for (j, s) in row.iter_mut().enumerate() {
                    if visible(j) {
                        *s = (*s - mx).exp();
                        sum += *s;
                    } else {
                        *s = 0.0;
                    }
                }
                row.iter_mut().for_each(|x| *x /= sum);
            }
            gemm(m, n, dk, 1.0, p, (n as isize, 1), &vv.data[off..], (ds, 1), 0.0, &mut out.data[off..], (ds, 1));
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Attention probabilities of an attention node, `heads x m x n` flattened.
    pub fn attention_probs(&self, node: Var) -> Option<&[f64]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Probabilities of every attention node on the tape, in creation order.
    pub fn attention_maps(&self) -> Vec<&[f64]> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { probs, .. } => Some(probs.as_slice()),
                _ => None,
            })
            .collect()
    }

    /// Summed negative log-likelihood of `labels` under row-wise softmax of
    /// `logits`. Rows labelled `None` are ignored. Output is `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, labels.len());
        let vsz = lv.cols;
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for (r, label) in labels.iter().enumerate() {
            let row = lv.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + sum.ln();
            for c in 0..vsz {
                probs[r * vsz + c] = (row[c] - lse).exp();
            }
            if let Some(y) = label {
                loss += lse - row[*y];
            }
        }
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Binary cross-entropy on a `1 x 1` logit.
    pub fn bce_with_logit(&mut self, logit: Var, label: bool) -> Var {
        let z = self.scalar(logit);
        let y = if label { 1.0 } else { 0.0 };
        // softplus(z) - y z, computed stably
        let loss = z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        self.push(Tensor::from_vec(1, 1, vec![loss]), Op::Bce { logit, label: y })
    }

    pub fn sum(&mut self, scalars: &[Var]) -> Var {
        let total: f64 = scalars.iter().map(|&s| self.scalar(s)).sum();
        self.push(Tensor::from_vec(1, 1, vec![total]), Op::Sum(scalars.to_vec()))
    }

    /// Back-propagates from scalar `root` and accumulates parameter gradients
    /// into `param_grads` (indexed like the parameter slice).
    pub fn backward(&self, root: Var, param_grads: &mut [Tensor]) {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(1, 1, 1.0));

        fn acc<'g>(grads: &'g mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &'g mut Tensor {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(idx) => param_grads[*idx].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows, av.cols, bv.cols);
                    let ga = acc(&mut grads, *a, m, k);
                    gemm(m, n, k, 1.0, &g.data, (n as isize, 1), &bv.data, (1, n as isize), 1.0, &mut ga.data, (k as isize, 1));
                    let gb = acc(&mut grads, *b, k, n);
                    gemm(k, m, n, 1.0, &av.data, (1, k as isize), &g.data, (n as isize, 1), 1.0, &mut gb.data, (n as isize, 1));
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows, av.cols, bv.rows);
                    let ga = acc(&mut grads, *a, m, k);
                    gemm(m, n, k, 1.0, &g.data, (n as isize, 1), &bv.data, (k as isize, 1), 1.0, &mut ga.data, (k as isize, 1));
                    let gb = acc(&mut grads, *b, n, k);
                    gemm(n, m, k, 1.0, &g.data, (1, n as isize), &av.data, (k as isize, 1), 1.0, &mut gb.data, (k as isize, 1));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    acc(&mut grads, *b, g.rows, g.cols).add_assign(&g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    let gr = acc(&mut grads, *row, 1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gr.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut grads, *a, g.rows, g.cols);
                    for ((o, &x), &gy) in ga.data.iter_mut().zip(&av.data).zip(&g.data) {
                        *o += gy * gelu_grad(x);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, n) = (g.rows, g.cols);
                    {
                        let gg = acc(&mut grads, *gain, 1, n);
                        for r in 0..rows {
                            for c in 0..n {
                                gg.data[c] += g.data[r * n + c] * xhat[r * n + c];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *bias, 1, n);
                        for r in 0..rows {
                            for c in 0..n {
                                gb.data[c] += g.data[r * n + c];
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, rows, n);
                    let nf = n as f64;
                    let mut dxhat = vec![0.0; n];
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..n {
                            let d = g.data[r * n + c] * gv.data[c];
                            dxhat[c] = d;
                            sum_d += d;
                            sum_dx += d * xhat[r * n + c];
                        }
                        for c in 0..n {
                            gx.data[r * n + c] += inv_std[r] / nf
                                * (nf * dxhat[c] - sum_d - xhat[r * n + c] * sum_dx);
                        }
                    }
                }
                Op::Embed { table, ids } => {
                    let tv = self.value(*table);
                    let gt = acc(&mut grads, *table, tv.rows, tv.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, y) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::MulConst { x, factor } => {
                    let gx = acc(&mut grads, *x, g.rows, g.cols);
                    for ((o, gy), f) in gx.data.iter_mut().zip(&g.data).zip(factor) {
                        *o += gy * f;
                    }
                }
                Op::Row { x, row } => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv.rows, xv.cols);
                    for (a, b) in gx.row_mut(*row).iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (m, d, n) = (qv.rows, qv.cols, kv.rows);
                    let dk = d / heads;
                    let scale = 1.0 / (dk as f64).sqrt();
                    let ds = d as isize;
                    let mut gq = Tensor::zeros(m, d);
                    let mut gk = Tensor::zeros(n, d);
                    let mut gv = Tensor::zeros(n, d);
                    let mut dp = vec![0.0; m * n];
                    for h in 0..*heads {
                        let off = h * dk;
                        let p = &probs[h * m * n..(h + 1) * m * n];
                        // dP = dO V^T
                        gemm(m, dk, n, 1.0, &g.data[off..], (ds, 1), &vv.data[off..], (1, ds), 0.0, &mut dp, (n as isize, 1));
                        // dV = P^T dO
                        gemm(n, m, dk, 1.0, p, (1, n as isize), &g.data[off..], (ds, 1), 1.0, &mut gv.data[off..], (ds, 1));
                        // dS = P * (dP - rowsum(dP * P)), scaled
                        for i in 0..m {
                            let pr = &p[i * n..(i + 1) * n];
                            let dr = &mut dp[i * n..(i + 1) * n];
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (dv, pv) in dr.iter_mut().zip(pr) {
                                *dv = pv * (*dv - dot) * scale;
                            }
                        }
                        // dQ = dS K ; dK = dS^T Q
                        gemm(m, n, dk, 1.0, &dp, (n as isize, 1), &kv.data[off..], (ds, 1), 1.0, &mut gq.data[off..], (ds, 1));
                        gemm(n, m, dk, 1.0, &dp, (1, n as isize), &qv.data[off..], (ds, 1), 1.0, &mut gk.data[off..], (ds, 1));
                    }
                    acc(&mut grads, *q, m, d).add_assign(&gq);
                    acc(&mut grads, *k, n, d).add_assign(&gk);
                    acc(&mut grads, *v, n, d).add_assign(&gv);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let lv = self.value(*logits);
                    let vsz = lv.cols;
                    let up = g.data[0];
                    let gl = acc(&mut grads, *logits, lv.rows, vsz);
                    for (r, label) in labels.iter().enumerate() {
                        let Some(y) = label else { continue };
                        for c in 0..vsz {
                            gl.data[r * vsz + c] += up * probs[r * vsz + c];
                        }
                        gl.data[r * vsz + y] -= up;
                    }
                }
                Op::Bce { logit, label } => {
                    let z = self.scalar(*logit);
                    let s = 1.0 / (1.0 + (-z).exp());
                    acc(&mut grads, *logit, 1, 1).data[0] += g.data[0] * (s - label);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads, *p, 1, 1).data[0] += g.data[0];
                    }
                }
            }
        }
    }
}
