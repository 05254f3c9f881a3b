//! Compares analytic gradients with central finite differences.

use cctforge::cli::grad_check_batch;
use cctforge::model::{grad_check, ModelConfig, ModelParams};

fn main() -> cctforge::Result<()> {
    let cfg = ModelConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 40,
        max_src_len: 16,
        max_tgt_len: 8,
        dropout_rate: 0.0,
    };
    let params = ModelParams::init(cfg, 1)?;
    let batch = grad_check_batch(1);
    for eps in [1e-3, 1e-4, 1e-5] {
        let r = grad_check(&params, &batch, eps, 0.01, 20, 1)?;
        println!("eps {eps:.0e}: max relative error {:.3e} over {} of {} parameters", r.max_rel_error, r.checked, r.total);
    }
    Ok(())
}
