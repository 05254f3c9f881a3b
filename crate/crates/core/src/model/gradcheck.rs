//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::ModelParams;
use super::transformer::{batch_loss_grad, combined_pretrain_loss, Example};
use crate::error::Result;

/// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator,
/// where `floor` is the larger of `REL_FLOOR` and [`resolution_floor`].
pub const REL_FLOOR: f64 = 1e-6;

/// Relative accuracy the resolution floor is scaled to.
pub const RESOLUTION_TARGET: f64 = 1e-4;

/// Smallest gradient magnitude a central difference of step `epsilon` can
/// resolve to `RESOLUTION_TARGET` when the loss carries one unit of
/// round-off at `loss`.
pub fn resolution_floor(loss: f64, epsilon: f64) -> f64 {
    loss.abs() * f64::EPSILON / (2.0 * epsilon) / RESOLUTION_TARGET
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Denominator floor used for the relative errors.
    pub rel_floor: f64,
    /// L2 norm of the full analytic gradient.
    pub grad_norm: f64,
    pub checked: usize,
    pub total: usize,
}

/// Compares the analytic gradient of the combined loss with central
/// differences on a seeded random subset of `fraction` of all scalars
/// (at least `min_checked`).
pub fn grad_check(
    params: &ModelParams,
    batch: &[Example],
    epsilon: f64,
    fraction: f64,
    min_checked: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = batch_loss_grad(params, batch, None)?.grads;
    let base = combined_pretrain_loss(params, batch)?.0;
    let floor = REL_FLOOR.max(resolution_floor(base, epsilon));
    let grad_norm = analytic.iter().flat_map(|t| &t.data).map(|g| g * g).sum::<f64>().sqrt();

    let mut offsets = Vec::with_capacity(params.tensors.len());
    let mut total = 0;
    for t in &params.tensors {
        offsets.push(total);
        total += t.len();
    }
    let n = ((total as f64 * fraction).ceil() as usize).max(min_checked).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, n).into_vec();
    picks.sort_unstable();

    let mut work = params.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for flat in picks {
        let ti = offsets.partition_point(|&o| o <= flat) - 1;
        let j = flat - offsets[ti];
        let orig = work.tensors[ti].data[j];
        work.tensors[ti].data[j] = orig + epsilon;
        let lp = combined_pretrain_loss(&work, batch)?.0;
        work.tensors[ti].data[j] = orig - epsilon;
        let lm = combined_pretrain_loss(&work, batch)?.0;
        work.tensors[ti].data[j] = orig;
        let numeric = (lp - lm) / (2.0 * epsilon);
        let a = analytic[ti].data[j];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(floor);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        rel_floor: floor,
        grad_norm,
        checked: n,
        total,
    })
}
