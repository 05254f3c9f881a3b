//! Brute-force reference implementations of the evaluation metrics.

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            out.push(tokens[i..i + n].to_vec());
        }
    }
    out
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// Smoothed BLEU-4 / GLEU by direct enumeration of n-gram lists.
fn score(hyp: &[String], reference: &[String], source: Option<&[String]>) -> f64 {
    assert!(!reference.is_empty());
    if hyp.is_empty() {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 1..=4 {
        let h = ngrams(hyp, n);
        let r = ngrams(reference, n);
        let s = source.map(|s| ngrams(s, n)).unwrap_or_default();
        let mut matched = 0i64;
        let mut penalty = 0i64;
        for g in distinct(&h) {
            let hc = occurrences(&h, &g);
            let rc = occurrences(&r, &g);
            matched += hc.min(rc) as i64;
            if rc == 0 && source.is_some() {
                penalty += hc.min(occurrences(&s, &g)) as i64;
            }
        }
        let num = (matched - penalty).max(0) as f64;
        let p = if n == 1 { num / h.len() as f64 } else { (num + 1.0) / (h.len() as f64 + 1.0) };
        if p == 0.0 {
            return 0.0;
        }
        logs.push(p.ln());
    }
    let (hl, rl) = (hyp.len() as f64, reference.len() as f64);
    let bp = if hl < rl { (1.0 - rl / hl).exp() } else { 1.0 };
    100.0 * bp * (logs.iter().sum::<f64>() / 4.0).exp()
}

pub fn bleu(hyp: &[String], reference: &[String]) -> f64 {
    let lower = |v: &[String]| v.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>();
    score(&lower(hyp), &lower(reference), None)
}

pub fn gleu(source: &[String], hyp: &[String], reference: &[String]) -> f64 {
    score(hyp, reference, Some(source))
}

/// F1 from an explicit confusion matrix: `2TP / (2TP + FP + FN)`.
pub fn f1(pred: &[bool], labels: &[bool]) -> f64 {
    let mut m = [[0usize; 2]; 2];
    for (&p, &l) in pred.iter().zip(labels) {
        m[p as usize][l as usize] += 1;
    }
    let (tp, fp, fn_) = (m[1][1], m[1][0], m[0][1]);
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Pair-enumeration AUC.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs as f64
}

pub fn accuracy(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut hits = 0;
    for i in 0..hyps.len() {
        if hyps[i] == refs[i] {
            hits += 1;
        }
    }
    hits as f64 / hyps.len() as f64
}

/// `(W+, two-sided p)` by enumerating every sign assignment.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = d.len();
    assert!(n <= 20, "enumeration is limited to small samples");
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let (mut lower, mut upper) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= w_plus + 1e-9 {
            lower += 1;
        }
        if w >= w_plus - 1e-9 {
            upper += 1;
        }
    }
    let total = (1u64 << n) as f64;
    let p = (2.0 * (lower.min(upper) as f64) / total).min(1.0);
    (w_plus, p)
}
