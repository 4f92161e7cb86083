//! Cross-entropy and the priority-modulated batch loss.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `−log softmax(logits)[label]`, stabilised by subtracting the max logit.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    lse - (logits[label] - max)
}

/// Softmax probabilities, written into `out`.
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Normalised priority scores `s = (p − p_min) / (p_max − p_min)`, zero when the
/// range is degenerate.
pub fn priority_scores(priorities: &[u32], range: (u32, u32)) -> Vec<f64> {
    let (lo, hi) = range;
    priorities
        .iter()
        .map(|&p| {
            if hi > lo {
                (p.clamp(lo, hi) - lo) as f64 / (hi - lo) as f64
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-sample weights `(1 + λ s_i) / n` whose dot product with the losses is the
/// modulated batch loss.
pub fn modulation_weights<T: Scalar>(priorities: &[u32], range: (u32, u32), lambda_c: f64) -> Result<Vec<T>> {
    if !(lambda_c.is_finite() && lambda_c >= 0.0) {
        return Err(Error::Config(format!("lambda_c {lambda_c} must be non-negative")));
    }
    if priorities.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let n = priorities.len() as f64;
    Ok(priority_scores(priorities, range)
        .into_iter()
        .map(|s| T::of((1.0 + lambda_c * s) / n))
        .collect())
}

/// Mean of `ℓ_i (1 + λ s_i)` with the priority range taken from `priorities`.
pub fn modulated_loss<T: Scalar>(losses: &[T], priorities: &[u32], lambda_c: f64) -> Result<T> {
    let lo = priorities.iter().copied().min().unwrap_or(0);
    let hi = priorities.iter().copied().max().unwrap_or(0);
    modulated_loss_in_range(losses, priorities, (lo, hi), lambda_c)
}

/// As [`modulated_loss`] with an explicit `(p_min, p_max)`, e.g. the levels of the
/// whole contract set rather than those present in one batch.
pub fn modulated_loss_in_range<T: Scalar>(
    losses: &[T],
    priorities: &[u32],
    range: (u32, u32),
    lambda_c: f64,
) -> Result<T> {
    if losses.len() != priorities.len() {
        return Err(Error::Shape(format!(
            "{} losses for {} priorities",
            losses.len(),
            priorities.len()
        )));
    }
    let w = modulation_weights::<T>(priorities, range, lambda_c)?;
    Ok(losses.iter().zip(&w).map(|(&l, &w)| l * w).sum())
}
