//! Training harness: a small perceptron optimised under a sampling policy, with
//! per-draw coverage accounting and held-out evaluation.
//!
//! A run is strictly sequential. Parameters are initialised from child stream 0 of
//! the run seed and batches are drawn from child stream 1, so a fixed
//! [`TrainConfig`] reproduces its [`RunMetrics`] exactly.

pub mod loss;
pub mod mlp;
pub mod optim;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageCurve, CoverageLedger};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::registry::ContractSet;
use crate::risk::{service_risk, ContractLossVector};
use crate::rng::SeededStream;
use crate::sampling::{MixedSampler, PolicyKind, SamplingPolicy};
use crate::scalar::Scalar;

pub use loss::{cross_entropy, modulated_loss, modulated_loss_in_range};
pub use mlp::{gradient_check, ForwardOutput, Mlp};
pub use optim::{AdamW, AdamWConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub policy: SamplingPolicy,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Held-out fraction for the stratified split made by callers.
    pub test_fraction: f64,
    /// Ceiling `B` on contract losses.
    pub loss_bound: f64,
    /// Coverage-curve logging cadence in steps.
    pub curve_every: u64,
    /// When set, PrioCovErr is also reported over the final `cov_window` steps.
    pub cov_window: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            policy: SamplingPolicy::new(PolicyKind::Rand),
            steps: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            hidden: 64,
            seed: 0,
            test_fraction: 0.2,
            loss_bound: 10.0,
            curve_every: 100,
            cov_window: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("steps, batch_size and hidden must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction {} outside (0, 1)", self.test_fraction)));
        }
        if !(self.loss_bound > 0.0 && self.loss_bound.is_finite()) {
            return Err(Error::Config(format!("loss bound {} must be positive", self.loss_bound)));
        }
        if self.cov_window == Some(0) {
            return Err(Error::Config("cov_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Held-out statistics of one contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractLossRow {
    pub key_parts: Vec<String>,
    /// Training members `n_c`.
    pub n_c: usize,
    pub n_test: usize,
    /// Mean test loss clipped at `B`; absent without test members.
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub priority: u32,
}

/// Test samples whose key never occurred in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenBucket {
    pub n_test: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub acc_all: f64,
    /// Pooled over test samples in maximum-priority contracts; absent if none.
    pub acc_high: Option<f64>,
    pub n_high: usize,
    pub per_contract: Vec<ContractLossRow>,
    /// `R(w)` on test contract losses when every contract has test members.
    pub service_risk_at_targets: Option<f64>,
    pub unseen: Option<UnseenBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: String,
    pub alpha: f64,
    pub lambda_c: f64,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub draws: u64,
    pub acc_all: f64,
    pub acc_high: Option<f64>,
    pub n_high: usize,
    /// `100 ‖q̂ − w‖₁` over every draw of the run.
    pub prio_cov_err: f64,
    pub cov_window: Option<u64>,
    pub prio_cov_err_window: Option<f64>,
    pub target_shares: Vec<f64>,
    pub final_coverage: Vec<f64>,
    pub train_loss_first_decile: f64,
    pub train_loss_last_decile: f64,
    pub service_risk_at_targets: Option<f64>,
    pub per_contract: Vec<ContractLossRow>,
    pub unseen: Option<UnseenBucket>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Mlp<T>,
    pub metrics: RunMetrics,
    pub curve: CoverageCurve,
    /// Plain mean cross-entropy of each step's batch.
    pub loss_history: Vec<f64>,
}

fn features_as<T: Scalar>(x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| T::of(v)).collect()
}

fn decile_means(history: &[f64]) -> (f64, f64) {
    let n = (history.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&history[..n]), mean(&history[history.len() - n..]))
}

fn priority_range(priorities: &[u32]) -> (u32, u32) {
    let lo = priorities.iter().copied().min().unwrap_or(0);
    let hi = priorities.iter().copied().max().unwrap_or(0);
    (lo, hi)
}

/// Trains on `train` (whose samples must be exactly those of `set`) and evaluates
/// on `test`.
pub fn train<T: Scalar>(train: &Dataset, test: &Dataset, set: &ContractSet, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.dim != test.dim || train.num_classes() != test.num_classes() {
        return Err(Error::Shape("train and test splits disagree on dimension or classes".into()));
    }
    let sampler = MixedSampler::for_policy(&cfg.policy, set, &train.samples)?;
    let shares = set.shares()?;
    let priorities = set.priorities()?;
    let range = priority_range(&priorities);
    let row_of: HashMap<usize, usize> = train.samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect();

    let root = SeededStream::new(cfg.seed);
    let mut model = Mlp::<T>::new(train.dim, cfg.hidden, train.num_classes(), &mut root.child(0))?;
    let mut draws = root.child(1);
    let mut opt = AdamW::<T>::new(cfg.optimizer(), model.params().len())?;

    let mut ledger = CoverageLedger::new(set.len());
    let mut window = cfg.cov_window.map(|_| CoverageLedger::new(set.len()));
    let window_start = cfg.cov_window.map_or(u64::MAX, |w| cfg.steps.saturating_sub(w));
    let mut curve = CoverageCurve::new(cfg.curve_every);
    let mut loss_history = Vec::with_capacity(cfg.steps as usize);

    let d = train.dim;
    let mut features = vec![T::zero(); cfg.batch_size * d];
    let mut labels = vec![0usize; cfg.batch_size];
    let mut batch_priorities = vec![0u32; cfg.batch_size];
    for step in 1..=cfg.steps {
        for b in 0..cfg.batch_size {
            let draw = sampler.mixed_step(&mut draws);
            ledger.record(draw.contract)?;
            if step > window_start {
                if let Some(w) = window.as_mut() {
                    w.record(draw.contract)?;
                }
            }
            let sample = &train.samples[row_of[&draw.sample_id]];
            for (dst, &v) in features[b * d..(b + 1) * d].iter_mut().zip(&sample.features) {
                *dst = T::of(v);
            }
            labels[b] = sample.label;
            batch_priorities[b] = priorities[draw.contract];
        }
        let weights = loss::modulation_weights::<T>(&batch_priorities, range, cfg.policy.lambda_c)?;
        let (losses, grad) = model.loss_gradient(&features, &labels, &weights)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step, what: "gradient".into() });
        }
        opt.step(model.params_mut(), &grad)?;
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { step, what: "parameter".into() });
        }
        let mean = losses.iter().map(|l| l.to_f64_lossy()).sum::<f64>() / losses.len() as f64;
        loss_history.push(mean);
        curve.observe(step, &ledger, &shares)?;
    }
    curve.push(cfg.steps, &ledger, &shares)?;

    let eval = evaluate(&model, test, set, cfg.loss_bound)?;
    let (first, last) = decile_means(&loss_history);
    let metrics = RunMetrics {
        policy: cfg.policy.kind.name().to_string(),
        alpha: cfg.policy.alpha,
        lambda_c: cfg.policy.lambda_c,
        seed: cfg.seed,
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        draws: ledger.total(),
        acc_all: eval.acc_all,
        acc_high: eval.acc_high,
        n_high: eval.n_high,
        prio_cov_err: ledger.prio_cov_err_percent(&shares)?,
        cov_window: cfg.cov_window,
        prio_cov_err_window: window.map(|w| w.prio_cov_err_percent(&shares)).transpose()?,
        target_shares: shares,
        final_coverage: ledger.empirical_coverage()?,
        train_loss_first_decile: first,
        train_loss_last_decile: last,
        service_risk_at_targets: eval.service_risk_at_targets,
        per_contract: eval.per_contract,
        unseen: eval.unseen,
    };
    Ok(TrainOutcome {
        model,
        metrics,
        curve,
        loss_history,
    })
}

/// Accuracies in percent plus per-contract held-out losses.
pub fn evaluate<T: Scalar>(model: &Mlp<T>, test: &Dataset, set: &ContractSet, loss_bound: f64) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let priorities = set.priorities()?;
    let top = priorities.iter().copied().max();
    let m = set.len();
    let mut loss_sum = vec![0.0; m];
    let mut correct_by = vec![0usize; m];
    let mut n_by = vec![0usize; m];
    let (mut unseen_n, mut unseen_loss, mut unseen_correct) = (0usize, 0.0, 0usize);
    let (mut correct, mut high, mut high_correct) = (0usize, 0usize, 0usize);
    for s in &test.samples {
        let x = features_as::<T>(&s.features);
        let out = model.forward_loss(&x, &[s.label])?;
        let loss = out.losses[0].to_f64_lossy();
        let hit = model.predict(&x) == s.label;
        correct += hit as usize;
        match set.lookup(&set.key_for(s)?) {
            Some(c) => {
                loss_sum[c] += loss;
                n_by[c] += 1;
                correct_by[c] += hit as usize;
                if Some(priorities[c]) == top {
                    high += 1;
                    high_correct += hit as usize;
                }
            }
            None => {
                unseen_n += 1;
                unseen_loss += loss;
                unseen_correct += hit as usize;
            }
        }
    }
    let pct = |a: usize, b: usize| 100.0 * a as f64 / b as f64;
    let per_contract: Vec<ContractLossRow> = set
        .contracts()
        .iter()
        .enumerate()
        .map(|(c, contract)| ContractLossRow {
            key_parts: contract.key.parts().to_vec(),
            n_c: contract.n(),
            n_test: n_by[c],
            loss: (n_by[c] > 0).then(|| (loss_sum[c] / n_by[c] as f64).clamp(0.0, loss_bound)),
            accuracy: (n_by[c] > 0).then(|| pct(correct_by[c], n_by[c])),
            priority: priorities[c],
        })
        .collect();
    let service_risk_at_targets = if per_contract.iter().all(|r| r.n_test > 0) {
        let losses = per_contract.iter().map(|r| r.loss.unwrap_or(0.0)).collect();
        let lv = ContractLossVector::new(losses, loss_bound)?;
        Some(service_risk(&lv, &set.shares()?)?)
    } else {
        None
    };
    Ok(Evaluation {
        acc_all: pct(correct, test.len()),
        acc_high: (high > 0).then(|| pct(high_correct, high)),
        n_high: high,
        per_contract,
        service_risk_at_targets,
        unseen: (unseen_n > 0).then(|| UnseenBucket {
            n_test: unseen_n,
            loss: unseen_loss / unseen_n as f64,
            accuracy: pct(unseen_correct, unseen_n),
        }),
    })
}
