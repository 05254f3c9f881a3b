//! Line-by-line brute-force interpreter of the data-flow rules.

use cctforge::tokens::tokenize;

pub type Occ = (String, usize, usize);

/// Keywords the random programs in the tests may contain.
pub const KEYWORDS: &[&str] = &["return", "if", "None", "for", "in", "True", "not"];

fn is_ident(t: &str) -> bool {
    let mut cs = t.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&t)
}

fn is_assignment(toks: &[String]) -> bool {
    toks.len() >= 2 && is_ident(&toks[0]) && toks[1] == "=" && toks.get(2).map(|t| t != "=").unwrap_or(true)
}

fn is_use(toks: &[String], start: usize, i: usize) -> bool {
    let quotes_before = toks[start..i].iter().filter(|t| *t == "\"").count();
    is_ident(&toks[i]) && quotes_before % 2 == 0 && toks.get(i + 1).map(|n| n != "(").unwrap_or(true)
}

/// Edges `(use, source)` sorted by use position then source position.
pub fn edges(lines: &[String]) -> Vec<(Occ, Occ)> {
    let toks: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
    let mut out = Vec::new();
    for (li, t) in toks.iter().enumerate() {
        let assign = is_assignment(t);
        let start = if assign { 2 } else { 0 };
        for ti in start..t.len() {
            if !is_use(t, start, ti) {
                continue;
            }
            let user = (t[ti].clone(), li, ti);
            let mut srcs = Vec::new();
            for lj in (0..li).rev() {
                if is_assignment(&toks[lj]) && toks[lj][0] == t[ti] {
                    srcs.push((t[ti].clone(), lj, 0));
                    break;
                }
            }
            if assign {
                srcs.push((t[0].clone(), li, 0));
            }
            for s in srcs {
                out.push((user.clone(), s));
            }
        }
    }
    out.sort_by_key(|(u, s)| (u.1, u.2, s.1, s.2));
    out
}
