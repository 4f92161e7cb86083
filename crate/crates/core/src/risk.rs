//! Contract-level losses and service risk `R(q) = Σ_c q(c) ℓ(c)`.
//!
//! Contract losses are means over members, clipped to `[0, B]` after averaging,
//! so `|R(q) − R(q̃)| ≤ B ‖q − q̃‖₁` applies to every stored vector.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::registry::ContractSet;
use crate::scalar::{l1_distance, Scalar};

/// Per-contract losses, each within `[0, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractLossVector<T> {
    losses: Vec<T>,
    bound: T,
}

impl<T: Scalar> ContractLossVector<T> {
    /// Clips each loss into `[0, bound]`.
    pub fn new(losses: Vec<T>, bound: T) -> Result<Self> {
        if !(bound.is_finite() && bound > T::zero()) {
            return Err(Error::Config(format!("loss bound {bound} must be positive and finite")));
        }
        if let Some(l) = losses.iter().find(|l| l.is_nan()) {
            return Err(Error::Data(format!("contract loss {l} is not a number")));
        }
        Ok(Self {
            losses: losses.into_iter().map(|l| l.max(T::zero()).min(bound)).collect(),
            bound,
        })
    }

    pub fn losses(&self) -> &[T] {
        &self.losses
    }

    pub fn bound(&self) -> T {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn max_loss(&self) -> T {
        self.losses.iter().copied().fold(T::zero(), T::max)
    }
}

/// Mean member loss per contract, clipped at `bound`.
pub fn contract_losses<T: Scalar>(
    per_sample: &HashMap<usize, T>,
    set: &ContractSet,
    bound: T,
) -> Result<ContractLossVector<T>> {
    let mut losses = Vec::with_capacity(set.len());
    for c in set.contracts() {
        let mut sum = T::zero();
        for id in &c.member_ids {
            let l = per_sample
                .get(id)
                .ok_or_else(|| Error::Shape(format!("no loss for sample {id}")))?;
            if !l.is_finite() {
                return Err(Error::Data(format!("loss for sample {id} is {l}")));
            }
            sum += *l;
        }
        losses.push(sum / T::of(c.n() as f64));
    }
    ContractLossVector::new(losses, bound)
}

fn check_distribution<T: Scalar>(q: &[T], m: usize, name: &str) -> Result<()> {
    if q.len() != m {
        return Err(Error::Shape(format!("{name} has {} entries for {m} contracts", q.len())));
    }
    if q.iter().any(|p| !p.is_finite() || *p < T::zero()) {
        return Err(Error::Input(format!("{name} has a negative or non-finite entry")));
    }
    let total: T = q.iter().copied().sum();
    if (total - T::one()).abs() > T::epsilon().sqrt() {
        return Err(Error::Input(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

pub fn service_risk<T: Scalar>(lv: &ContractLossVector<T>, q: &[T]) -> Result<T> {
    check_distribution(q, lv.len(), "contract distribution")?;
    Ok(q.iter().zip(lv.losses()).map(|(&p, &l)| p * l).sum())
}

/// Outcome of one `lhs ≤ rhs` bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub holds: bool,
}

impl<T: Scalar> BoundCheck<T> {
    /// Absolute slack: 1e-12, widened for low-precision scalars.
    pub fn evaluate(lhs: T, rhs: T) -> Self {
        let tol = T::of(1e-12).max(T::of(8.0) * T::epsilon() * rhs.abs().max(T::one()));
        Self {
            lhs,
            rhs,
            holds: lhs <= rhs + tol,
        }
    }
}

/// `|R(q) − R(q̃)|` against `B ‖q − q̃‖₁`.
pub fn risk_deviation_bound_check<T: Scalar>(
    lv: &ContractLossVector<T>,
    q: &[T],
    q_tilde: &[T],
) -> Result<BoundCheck<T>> {
    risk_deviation_bound_check_scaled(lv, q, q_tilde, T::one())
}

/// As [`risk_deviation_bound_check`] with the right-hand side multiplied by
/// `rhs_scale`; values below 1 exist to confirm a broken bound is caught.
pub fn risk_deviation_bound_check_scaled<T: Scalar>(
    lv: &ContractLossVector<T>,
    q: &[T],
    q_tilde: &[T],
    rhs_scale: T,
) -> Result<BoundCheck<T>> {
    check_distribution(q_tilde, lv.len(), "comparison distribution")?;
    let lhs = (service_risk(lv, q)? - service_risk(lv, q_tilde)?).abs();
    let rhs = rhs_scale * lv.bound() * l1_distance(q, q_tilde);
    Ok(BoundCheck::evaluate(lhs, rhs))
}
