//! One-hidden-layer ReLU perceptron with hand-written backpropagation.
//!
//! Parameters live in one flat buffer laid out as `W1 (h×d) | b1 (h) | W2 (K×h) | b2 (K)`,
//! row-major, so the optimizer can treat them as a single vector.

use crate::error::{Error, Result};
use crate::rng::SeededStream;
use crate::scalar::Scalar;
use crate::trainer::loss::{cross_entropy, softmax_into};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    d: usize,
    h: usize,
    k: usize,
    params: Vec<T>,
}

/// Per-sample losses and row-major `n×K` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub losses: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn param_count(d: usize, h: usize, k: usize) -> usize {
        h * d + h + k * h + k
    }

    /// Weights and biases drawn from `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new(d: usize, h: usize, k: usize, stream: &mut SeededStream) -> Result<Self> {
        Self::check_sizes(d, h, k)?;
        let mut params = Vec::with_capacity(Self::param_count(d, h, k));
        let mut fill = |count: usize, fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..count {
                params.push(T::of(scale * (2.0 * stream.next_unit() - 1.0)));
            }
        };
        fill(h * d + h, d);
        fill(k * h + k, h);
        Ok(Self { d, h, k, params })
    }

    pub fn from_params(d: usize, h: usize, k: usize, params: Vec<T>) -> Result<Self> {
        Self::check_sizes(d, h, k)?;
        if params.len() != Self::param_count(d, h, k) {
            return Err(Error::Shape(format!(
                "{} parameters for a {d}-{h}-{k} network",
                params.len()
            )));
        }
        Ok(Self { d, h, k, params })
    }

    fn check_sizes(d: usize, h: usize, k: usize) -> Result<()> {
        if d == 0 || h == 0 || k < 2 {
            return Err(Error::Config(format!("invalid layer sizes [{d}, {h}, {k}]")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.d, self.h, self.k]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn split(&self) -> (&[T], &[T], &[T], &[T]) {
        let (w1, rest) = self.params.split_at(self.h * self.d);
        let (b1, rest) = rest.split_at(self.h);
        let (w2, b2) = rest.split_at(self.k * self.h);
        (w1, b1, w2, b2)
    }

    /// Hidden pre-activations and logits for one input row.
    fn forward_row(&self, x: &[T], z1: &mut [T], logits: &mut [T]) {
        let (w1, b1, w2, b2) = self.split();
        for j in 0..self.h {
            let row = &w1[j * self.d..(j + 1) * self.d];
            z1[j] = b1[j] + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>();
        }
        for c in 0..self.k {
            let row = &w2[c * self.h..(c + 1) * self.h];
            logits[c] = b2[c]
                + row
                    .iter()
                    .zip(z1.iter())
                    .map(|(&w, &z)| w * z.max(T::zero()))
                    .sum::<T>();
        }
    }

    fn check_batch(&self, features: &[T], labels: &[usize]) -> Result<()> {
        if features.len() != labels.len() * self.d {
            return Err(Error::Shape(format!(
                "{} feature values for {} rows of dimension {}",
                features.len(),
                labels.len(),
                self.d
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature in row {}", i / self.d)));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.k) {
            return Err(Error::Shape(format!("label {y} for {} classes", self.k)));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        let mut z1 = vec![T::zero(); self.h];
        let mut out = vec![T::zero(); self.k];
        self.forward_row(x, &mut z1, &mut out);
        out
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, x: &[T]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    /// Cross-entropy per row. `features` is row-major `n×d`.
    pub fn forward_loss(&self, features: &[T], labels: &[usize]) -> Result<ForwardOutput<T>> {
        self.check_batch(features, labels)?;
        let mut z1 = vec![T::zero(); self.h];
        let mut logits = vec![T::zero(); labels.len() * self.k];
        let mut losses = Vec::with_capacity(labels.len());
        for (i, &y) in labels.iter().enumerate() {
            let out = &mut logits[i * self.k..(i + 1) * self.k];
            self.forward_row(&features[i * self.d..(i + 1) * self.d], &mut z1, out);
            losses.push(cross_entropy(out, y));
        }
        Ok(ForwardOutput { losses, logits })
    }

    /// Per-row losses and the gradient of `Σ_i weights[i] · loss_i`.
    pub fn loss_gradient(&self, features: &[T], labels: &[usize], weights: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_batch(features, labels)?;
        if weights.len() != labels.len() {
            return Err(Error::Shape(format!("{} weights for {} rows", weights.len(), labels.len())));
        }
        let (d, h, k) = (self.d, self.h, self.k);
        let (_, _, w2, _) = self.split();
        let mut grad = vec![T::zero(); self.params.len()];
        let (gw1, rest) = grad.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(k * h);

        let mut z1 = vec![T::zero(); h];
        let mut logits = vec![T::zero(); k];
        let mut delta = vec![T::zero(); k];
        let mut dz1 = vec![T::zero(); h];
        let mut losses = Vec::with_capacity(labels.len());
        for (i, (&y, &wt)) in labels.iter().zip(weights).enumerate() {
            let x = &features[i * d..(i + 1) * d];
            self.forward_row(x, &mut z1, &mut logits);
            losses.push(cross_entropy(&logits, y));
            softmax_into(&logits, &mut delta);
            delta[y] -= T::one();
            for v in delta.iter_mut() {
                *v *= wt;
            }
            dz1.fill(T::zero());
            for c in 0..k {
                let dc = delta[c];
                gb2[c] += dc;
                let row = &w2[c * h..(c + 1) * h];
                let grow = &mut gw2[c * h..(c + 1) * h];
                for j in 0..h {
                    grow[j] += dc * z1[j].max(T::zero());
                    dz1[j] += dc * row[j];
                }
            }
            for j in 0..h {
                if z1[j] <= T::zero() {
                    continue;
                }
                let dj = dz1[j];
                gb1[j] += dj;
                for (g, &v) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *g += dj * v;
                }
            }
        }
        Ok((losses, grad))
    }
}

/// Worst element-wise relative error between the analytic gradient and central
/// differences with step `step`, using `max(|a|, |n|, floor)` as the denominator.
pub fn gradient_check(
    model: &Mlp<f64>,
    features: &[f64],
    labels: &[usize],
    weights: &[f64],
    step: f64,
    floor: f64,
) -> Result<f64> {
    let (_, analytic) = model.loss_gradient(features, labels, weights)?;
    let objective = |m: &Mlp<f64>| -> Result<f64> {
        let out = m.forward_loss(features, labels)?;
        Ok(out.losses.iter().zip(weights).map(|(l, w)| l * w).sum())
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (p, &a) in analytic.iter().enumerate() {
        let original = probe.params[p];
        probe.params[p] = original + step;
        let up = objective(&probe)?;
        probe.params[p] = original - step;
        let down = objective(&probe)?;
        probe.params[p] = original;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
    }
    Ok(worst)
}
