//! Finite distributions with Vose alias tables.

use crate::error::{Error, Result};
use crate::rng::SeededStream;

const SUM_TOLERANCE: f64 = 1e-12;

/// A probability vector plus its alias table for O(1) draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probabilities: Vec<f64>,
    /// Acceptance threshold of each column, in [0, 1].
    threshold: Vec<f64>,
    alias: Vec<usize>,
}

impl DiscreteDistribution {
    /// `probabilities` must be non-negative and sum to 1 within 1e-12.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Input("distribution over an empty support".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Input("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Input(format!("probabilities sum to {total}, not 1")));
        }
        let (threshold, alias) = vose(&probabilities);
        Ok(Self {
            probabilities,
            threshold,
            alias,
        })
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Input("weights must have a positive finite sum".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("distribution over an empty support".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Column thresholds and aliases, for inspection.
    pub fn table(&self) -> (&[f64], &[usize]) {
        (&self.threshold, &self.alias)
    }

    /// Maps one uniform `u ∈ [0, 1)` to an outcome.
    pub fn sample_with(&self, u: f64) -> usize {
        let n = self.threshold.len();
        let x = u * n as f64;
        let column = (x as usize).min(n - 1);
        if x - (column as f64) < self.threshold[column] {
            column
        } else {
            self.alias[column]
        }
    }

    /// Consumes exactly one word of `stream`.
    pub fn sample(&self, stream: &mut SeededStream) -> usize {
        self.sample_with(stream.next_unit())
    }
}

/// Error-free sum: `a + b = s + e` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Vose's construction. Each column's scaled mass is carried as an unevaluated
/// pair `hi + lo` so residuals do not drift along long alias chains; only the
/// stored thresholds are rounded.
fn vose(p: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = p.len();
    // Scale by the compensated total so a sum slightly off 1 is spread
    // proportionally instead of landing on the last leftover column.
    let (total, err) = p.iter().fold((0.0, 0.0), |(s, e), &x| {
        let (s2, e2) = two_sum(s, x);
        (s2, e + e2)
    });
    let nf = n as f64 / (total + err);
    let mut hi: Vec<f64> = p.iter().map(|x| x * nf).collect();
    let mut lo: Vec<f64> = p.iter().zip(&hi).map(|(x, h)| x.mul_add(nf, -h)).collect();
    let mut threshold = vec![1.0; n];
    let mut alias: Vec<usize> = (0..n).collect();
    let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| hi[i] + lo[i] < 1.0);
    // Reverse so pops visit indices in ascending order.
    small.reverse();
    large.reverse();
    while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
        small.pop();
        let t = hi[s] + lo[s];
        threshold[s] = t;
        alias[s] = l;
        // hi[l] + lo[l] − (1 − t), keeping the rounding error of each step.
        let (d, d_err) = two_sum(1.0, -t);
        let (h, e) = two_sum(hi[l], -d);
        let (h, e2) = two_sum(h, e + lo[l] - d_err);
        hi[l] = h;
        lo[l] = e2;
        if hi[l] + lo[l] < 1.0 {
            large.pop();
            small.push(l);
        }
    }
    // Leftovers differ from 1 only by rounding.
    for i in large.into_iter().chain(small) {
        threshold[i] = 1.0;
        alias[i] = i;
    }
    (threshold, alias)
}
