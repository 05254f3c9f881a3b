//! Scores a few hypotheses with every evaluation metric.

use cctforge::metrics::{auc, bleu_bnorm, exact_match_accuracy, f1_binary, gleu, wilcoxon_signed_rank};
use cctforge::tokens::tokenize;

fn main() -> cctforge::Result<()> {
    let reference = tokenize("Enable subqueries in gsheetsdb");
    for hyp in ["enable subqueries in gsheetsdb", "Enable subqueries", "allow nested queries in gsheets"] {
        println!("B-Norm {:>7.3}  {hyp}", bleu_bnorm(&tokenize(hyp), &reference)?);
    }

    let src = tokenize("returns the count of rows");
    let refc = tokenize("returns the total of rows");
    for hyp in ["returns the total of rows", "returns the count of rows", "returns rows"] {
        println!("GLEU   {:>7.3}  {hyp}", gleu(&src, &tokenize(hyp), &refc)?);
    }
    let hyps = vec![tokenize("a b"), tokenize("c d")];
    let refs = vec![tokenize("a b"), tokenize("c e")];
    println!("accuracy {:.2}", exact_match_accuracy(&hyps, &refs)?);

    let labels = [true, true, false, false, true, false];
    let scores = [0.9, 0.6, 0.4, 0.7, 0.8, 0.1];
    let preds: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
    println!("F1 {:.3}  AUC {:.3}", f1_binary(&preds, &labels)?, auc(&scores, &labels)?);

    let a = [22.1, 19.8, 25.0, 18.2, 30.4, 21.7, 24.9, 20.3];
    let b = [20.9, 19.1, 23.2, 18.5, 28.0, 20.2, 23.3, 19.0];
    let w = wilcoxon_signed_rank(&a, &b)?;
    println!("Wilcoxon W={} p={:.4} ({:?}, n={})", w.statistic, w.p_value, w.method, w.n);
    Ok(())
}
