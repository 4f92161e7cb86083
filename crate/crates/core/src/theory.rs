//! Monte Carlo falsification harness for the coverage, risk and graph bounds.
//!
//! Coverage concentration: with i.i.d. contract draws `C_t ~ w`,
//!
//! ```text
//! P(|q̂_T(c) − w_c| ≥ ε) ≤ 2 exp(−2Tε²)
//! P(E_cov(T) ≥ mε)      ≤ 2m exp(−2Tε²)
//! ```
//!
//! Empirical rates are compared with a three-standard-error allowance on the
//! binomial estimate. Trials run in parallel on per-trial child streams, so reports
//! do not depend on thread scheduling.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{lipschitz_beta, graph_bounds_scaled, ContractGraph};
use crate::risk::{risk_deviation_bound_check_scaled, ContractLossVector};
use crate::rng::SeededStream;
use crate::sampling::DiscreteDistribution;
use crate::scalar::l1_distance;

/// Standard errors of slack granted to empirical rates.
pub const SE_ALLOWANCE: f64 = 3.0;

pub fn hoeffding_bound(t: u64, epsilon: f64) -> f64 {
    2.0 * (-2.0 * t as f64 * epsilon * epsilon).exp()
}

pub fn union_bound(m: usize, t: u64, epsilon: f64) -> f64 {
    m as f64 * hoeffding_bound(t, epsilon)
}

fn binomial_se(rate: f64, trials: usize) -> f64 {
    (rate * (1.0 - rate) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub t: u64,
    pub epsilon: f64,
    pub m: usize,
    pub trials: usize,
    pub per_contract_violation_rate: Vec<f64>,
    pub per_contract_standard_error: Vec<f64>,
    pub hoeffding_bound: f64,
    pub union_event_rate: f64,
    pub union_standard_error: f64,
    pub union_bound: f64,
    pub per_contract_holds: Vec<bool>,
    pub union_holds: bool,
    pub holds: bool,
}

/// Per-trial absolute deviations `|q̂_T(c) − w_c|` and their sum.
struct TrialOutcome {
    deviation: Vec<f64>,
    e_cov: f64,
}

fn simulate(w: &DiscreteDistribution, t: u64, mut stream: SeededStream) -> TrialOutcome {
    let mut counts = vec![0u64; w.len()];
    for _ in 0..t {
        counts[w.sample(&mut stream)] += 1;
    }
    let deviation: Vec<f64> = counts
        .iter()
        .zip(w.probabilities())
        .map(|(&n, &p)| (n as f64 / t as f64 - p).abs())
        .collect();
    let e_cov = deviation.iter().sum();
    TrialOutcome { deviation, e_cov }
}

fn run_trials(w: &DiscreteDistribution, t: u64, trials: usize, root: &SeededStream, offset: u64) -> Vec<TrialOutcome> {
    (0..trials)
        .into_par_iter()
        .map(|i| simulate(w, t, root.child(offset + i as u64)))
        .collect()
}

fn check_common(w: &[f64], t: u64, trials: usize) -> Result<DiscreteDistribution> {
    if t == 0 || trials == 0 {
        return Err(Error::Config("steps and trials must be positive".into()));
    }
    DiscreteDistribution::new(w.to_vec())
}

pub fn run_concentration_trials(w: &[f64], t: u64, epsilon: f64, trials: usize, seed: u64) -> Result<ConcentrationReport> {
    Ok(run_concentration_sweep(w, t, &[epsilon], trials, seed)?.remove(0))
}

/// One report per `ε`, all evaluated on the same simulated sequences.
pub fn run_concentration_sweep(
    w: &[f64],
    t: u64,
    epsilons: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<ConcentrationReport>> {
    let dist = check_common(w, t, trials)?;
    if epsilons.is_empty() || epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Config("epsilon values must be positive".into()));
    }
    let outcomes = run_trials(&dist, t, trials, &SeededStream::new(seed), 0);
    let m = w.len();
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let per_contract_violation_rate: Vec<f64> = (0..m)
                .map(|c| outcomes.iter().filter(|o| o.deviation[c] >= eps).count() as f64 / trials as f64)
                .collect();
            let per_contract_standard_error: Vec<f64> = per_contract_violation_rate
                .iter()
                .map(|&r| binomial_se(r, trials))
                .collect();
            let bound = hoeffding_bound(t, eps);
            let per_contract_holds: Vec<bool> = per_contract_violation_rate
                .iter()
                .zip(&per_contract_standard_error)
                .map(|(r, se)| *r <= bound + SE_ALLOWANCE * se)
                .collect();
            let union_event_rate =
                outcomes.iter().filter(|o| o.e_cov >= m as f64 * eps).count() as f64 / trials as f64;
            let union_standard_error = binomial_se(union_event_rate, trials);
            let ubound = union_bound(m, t, eps);
            let union_holds = union_event_rate <= ubound + SE_ALLOWANCE * union_standard_error;
            ConcentrationReport {
                t,
                epsilon: eps,
                m,
                trials,
                holds: union_holds && per_contract_holds.iter().all(|&h| h),
                per_contract_violation_rate,
                per_contract_standard_error,
                hoeffding_bound: bound,
                union_event_rate,
                union_standard_error,
                union_bound: ubound,
                per_contract_holds,
                union_holds,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub t: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCurve {
    pub trials: usize,
    pub points: Vec<DecayPoint>,
}

impl DecayCurve {
    /// `mean(T)·√T` relative to its value at the largest `T`.
    pub fn sqrt_t_ratios(&self) -> Vec<f64> {
        let Some(last) = self.points.last() else {
            return Vec::new();
        };
        let reference = last.mean * (last.t as f64).sqrt();
        self.points
            .iter()
            .map(|p| {
                let scaled = p.mean * (p.t as f64).sqrt();
                if reference == 0.0 && scaled == 0.0 {
                    1.0
                } else {
                    scaled / reference
                }
            })
            .collect()
    }

    /// Every ratio from [`Self::sqrt_t_ratios`] lies within `[1/factor, factor]`.
    pub fn within_envelope(&self, factor: f64) -> bool {
        self.sqrt_t_ratios()
            .iter()
            .all(|&r| r <= factor && r >= 1.0 / factor)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["T", "mean", "std"])?;
        for p in &self.points {
            w.write_record([p.t.to_string(), p.mean.to_string(), p.std.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and sample standard deviation of `E_cov(T)` at each grid point.
pub fn coverage_decay_curve(w: &[f64], t_grid: &[u64], trials: usize, seed: u64) -> Result<DecayCurve> {
    if t_grid.is_empty() || t_grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Config("T grid must be non-empty and strictly ascending".into()));
    }
    let root = SeededStream::new(seed);
    let mut points = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let dist = check_common(w, t, trials)?;
        let outcomes = run_trials(&dist, t, trials, &root, (j * trials) as u64);
        let (mean, std) = mean_std(outcomes.iter().map(|o| o.e_cov));
        points.push(DecayPoint { t, mean, std });
    }
    Ok(DecayCurve { trials, points })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Random point on the simplex; one time in four a vertex, to reach extremes.
fn random_distribution(m: usize, s: &mut SeededStream) -> Vec<f64> {
    if s.next_unit() < 0.25 {
        let mut q = vec![0.0; m];
        q[s.next_index(m)] = 1.0;
        return q;
    }
    let e: Vec<f64> = (0..m).map(|_| -(1.0 - s.next_unit()).ln()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn random_losses(m: usize, bound: f64, s: &mut SeededStream) -> ContractLossVector<f64> {
    let losses = (0..m)
        .map(|_| match s.next_index(8) {
            0 => 0.0,
            1 => bound,
            _ => bound * s.next_unit(),
        })
        .collect();
    ContractLossVector::new(losses, bound).expect("bound is positive")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskSweepReport {
    pub trials: usize,
    pub max_m: usize,
    pub bound: f64,
    pub rhs_scale: f64,
    pub violations: usize,
    /// Largest observed `lhs / rhs` over trials with `rhs > 0`.
    pub max_ratio: f64,
    pub holds: bool,
}

/// Randomised `(losses, q, q̃)` triples checked against `B ‖q − q̃‖₁`.
pub fn risk_bound_sweep(trials: usize, max_m: usize, bound: f64, seed: u64, rhs_scale: f64) -> Result<RiskSweepReport> {
    if trials == 0 || max_m == 0 {
        return Err(Error::Config("trials and max_m must be positive".into()));
    }
    let root = SeededStream::new(seed);
    let results = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = root.child(i as u64);
            let m = 1 + s.next_index(max_m);
            let lv = random_losses(m, bound, &mut s);
            let q = random_distribution(m, &mut s);
            let q2 = random_distribution(m, &mut s);
            risk_deviation_bound_check_scaled(&lv, &q, &q2, rhs_scale)
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = results.iter().filter(|r| !r.holds).count();
    let max_ratio = results
        .iter()
        .filter(|r| r.rhs > 0.0)
        .map(|r| r.lhs / r.rhs)
        .fold(0.0, f64::max);
    Ok(RiskSweepReport {
        trials,
        max_m,
        bound,
        rhs_scale,
        violations,
        max_ratio,
        holds: violations == 0,
    })
}

/// Connected graph: random recursive spanning tree plus extra edges with a
/// per-graph density.
pub fn random_connected_graph(m: usize, s: &mut SeededStream) -> ContractGraph {
    let mut edges: Vec<(usize, usize)> = (1..m).map(|v| (s.next_index(v), v)).collect();
    let density = 0.5 * s.next_unit();
    for u in 0..m {
        for v in u + 1..m {
            if s.next_unit() < density {
                edges.push((u, v));
            }
        }
    }
    ContractGraph::from_edges(m, &edges).expect("edges are in range")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphSweepReport {
    pub trials: usize,
    pub max_m: usize,
    pub rhs_scale: f64,
    pub max_loss_violations: usize,
    pub risk_violations: usize,
    /// Diagnostic: trials where the graph risk bound is tighter than `B ‖q − q̃‖₁`.
    pub graph_bound_tighter: usize,
    pub holds: bool,
}

/// Random connected graphs with random losses; `β` is the minimal constant.
pub fn graph_bound_sweep(trials: usize, max_m: usize, seed: u64, rhs_scale: f64) -> Result<GraphSweepReport> {
    if trials == 0 || max_m == 0 {
        return Err(Error::Config("trials and max_m must be positive".into()));
    }
    let bound = 1.0;
    let root = SeededStream::new(seed);
    let results = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = root.child(i as u64);
            let m = 1 + s.next_index(max_m);
            let g = random_connected_graph(m, &mut s);
            let lv = random_losses(m, bound, &mut s);
            let q = random_distribution(m, &mut s);
            let q2 = random_distribution(m, &mut s);
            let report = graph_bounds_scaled(&g, &lv, &q, &q2, rhs_scale)?;
            let plain_rhs = bound * l1_distance(&q, &q2);
            Ok((report, plain_rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_loss_violations = results.iter().filter(|(r, _)| !r.holds_max_loss).count();
    let risk_violations = results.iter().filter(|(r, _)| !r.holds_risk).count();
    let graph_bound_tighter = results.iter().filter(|(r, plain)| r.risk_bound_rhs < *plain).count();
    Ok(GraphSweepReport {
        trials,
        max_m,
        rhs_scale,
        max_loss_violations,
        risk_violations,
        graph_bound_tighter,
        holds: max_loss_violations == 0 && risk_violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementStudy {
    pub constructions: usize,
    /// Constructions whose fine contracts have lower mean within-contract variance.
    pub eligible: usize,
    pub fine_beta_not_larger: usize,
    pub fraction: f64,
}

/// Measures how often refining contracts lowers `β`.
///
/// Each construction lays `2M` fine contracts on a path with losses drifting
/// linearly plus jitter; coarse contracts merge consecutive pairs and sit on a
/// path of `M`. Member losses scatter uniformly around each fine mean.
pub fn refinement_beta_study(constructions: usize, seed: u64) -> Result<RefinementStudy> {
    let root = SeededStream::new(seed);
    let outcomes: Vec<(bool, bool)> = (0..constructions)
        .into_par_iter()
        .map(|i| {
            let mut s = root.child(i as u64);
            let coarse_m = 2 + s.next_index(5);
            let slope = 0.05 + 0.15 * s.next_unit();
            let jitter = 0.02;
            let spread = 0.05 * s.next_unit();
            let members = 8;
            let fine_samples: Vec<Vec<f64>> = (0..2 * coarse_m)
                .map(|j| {
                    let centre = 0.1 + slope * j as f64 + jitter * (2.0 * s.next_unit() - 1.0);
                    (0..members)
                        .map(|_| (centre + spread * (2.0 * s.next_unit() - 1.0)).max(0.0))
                        .collect()
                })
                .collect();
            let coarse_samples: Vec<Vec<f64>> = fine_samples
                .chunks(2)
                .map(|pair| pair.concat())
                .collect();
            let summarize = |groups: &[Vec<f64>]| -> (Vec<f64>, f64) {
                let stats: Vec<(f64, f64)> = groups.iter().map(|g| mean_var(g)).collect();
                let within = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
                (stats.into_iter().map(|s| s.0).collect(), within)
            };
            let (fine_means, fine_within) = summarize(&fine_samples);
            let (coarse_means, coarse_within) = summarize(&coarse_samples);
            let beta = |means: Vec<f64>| {
                let m = means.len();
                let path: Vec<(usize, usize)> = (1..m).map(|v| (v - 1, v)).collect();
                let g = ContractGraph::from_edges(m, &path).expect("path edges are in range");
                let bound = means.iter().copied().fold(1.0, f64::max);
                lipschitz_beta(&g, &ContractLossVector::new(means, bound).expect("bound positive"))
                    .expect("shapes match")
            };
            let eligible = fine_within < coarse_within;
            (eligible, beta(fine_means) <= beta(coarse_means))
        })
        .collect();
    let eligible = outcomes.iter().filter(|o| o.0).count();
    let fine_beta_not_larger = outcomes.iter().filter(|o| o.0 && o.1).count();
    Ok(RefinementStudy {
        constructions,
        eligible,
        fine_beta_not_larger,
        fraction: if eligible > 0 {
            fine_beta_not_larger as f64 / eligible as f64
        } else {
            f64::NAN
        },
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}
