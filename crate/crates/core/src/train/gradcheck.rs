//! Finite-difference verification of backpropagated gradients.

use rand::Rng;

use crate::rng;

use super::loss::ConsistencyReduction;
use super::model::ModelParams;
use super::trainer::{batch_loss, batch_loss_grad, PreparedSample};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`. The floor keeps parameters with
/// vanishing gradients from turning finite-difference roundoff into a large
/// relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between `grad` and central differences of `f` at
/// `x`, over the coordinates in `indices`.
pub fn check_gradient<F>(mut f: F, x: &[f64], grad: &[f64], indices: &[usize], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

/// Picks `per_block` random coordinates from each parameter block
/// (A1, b1, A2, b2, C, d).
pub fn sample_parameter_indices(params: &ModelParams, per_block: usize, seed: u64) -> Vec<usize> {
    sample_indices_where(params, per_block, seed, |_| true)
}

/// Like [`sample_parameter_indices`], but only keeps coordinates accepted by
/// `keep`. Gives up on a block after `100 * per_block` draws.
fn sample_indices_where(
    params: &ModelParams,
    per_block: usize,
    seed: u64,
    mut keep: impl FnMut(usize) -> bool,
) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[0x6763]);
    let mut out = Vec::new();
    for (start, end) in params.dims.layout().blocks() {
        let mut taken = 0;
        for _ in 0..100 * per_block {
            if taken == per_block {
                break;
            }
            let i = rng.random_range(start..end);
            if keep(i) {
                out.push(i);
                taken += 1;
            }
        }
    }
    out
}

/// Signs of every hidden pre-activation over all inputs of the batch.
fn relu_pattern(params: &ModelParams, batch: &[PreparedSample]) -> Vec<bool> {
    batch
        .iter()
        .flat_map(|s| std::iter::once(&s.x).chain(&s.augmented))
        .flat_map(|x| params.trace(x).pre.into_iter().map(|v| v > 0.0))
        .collect()
}

/// Compares the backprop gradient of the batch-mean `L` with central
/// differences on `per_block * 6` randomly chosen parameters and returns the
/// worst relative error. `L` includes `L_s` when the batch carries augmented
/// views.
///
/// Coordinates whose `+-h` probe switches any ReLU on or off are redrawn: the
/// loss has a kink inside the difference interval there, so the central
/// difference is not an estimate of the derivative. Pre-activations are
/// linear in each single parameter, so equal patterns at both ends mean no
/// kink in between.
pub fn gradient_check(
    params: &ModelParams,
    batch: &[PreparedSample],
    reduction: ConsistencyReduction,
    per_block: usize,
    seed: u64,
) -> f64 {
    let (_, grad) = batch_loss_grad(params, batch, reduction);
    let base = relu_pattern(params, batch);
    let mut probe = params.clone();
    let indices = sample_indices_where(params, per_block, seed, |i| {
        let orig = probe.weights[i];
        let smooth = [orig + FD_STEP, orig - FD_STEP].into_iter().all(|v| {
            probe.weights[i] = v;
            relu_pattern(&probe, batch) == base
        });
        probe.weights[i] = orig;
        smooth
    });
    check_gradient(
        |w| {
            probe.weights.copy_from_slice(w);
            batch_loss(&probe, batch, reduction).l_total
        },
        &params.weights,
        &grad,
        &indices,
        FD_STEP,
    )
}
