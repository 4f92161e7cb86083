//! Contract-governed sampling.
//!
//! The governed draw is two-stage: pick contract `c` with probability `w_c`, then a
//! member uniformly, so each member of `c` is drawn with probability `w_c / n_c`.
//! [`MixedSampler`] flips an `alpha`-coin per draw between that mechanism and a
//! baseline distribution over samples. All draws are i.i.d. with replacement.

mod alias;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use alias::DiscreteDistribution;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::registry::ContractSet;
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "rand")]
    Rand,
    #[serde(rename = "cb")]
    ClassBalanced,
    #[serde(rename = "osag")]
    Osag,
    #[serde(rename = "osag-mix")]
    OsagMix,
    #[serde(rename = "lambda-fairloss")]
    LambdaFairloss,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Rand,
        PolicyKind::ClassBalanced,
        PolicyKind::Osag,
        PolicyKind::OsagMix,
        PolicyKind::LambdaFairloss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rand => "rand",
            PolicyKind::ClassBalanced => "cb",
            PolicyKind::Osag => "osag",
            PolicyKind::OsagMix => "osag-mix",
            PolicyKind::LambdaFairloss => "lambda-fairloss",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

/// Distribution the mixture falls back to with probability `1 - alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Uniform,
    ClassBalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub kind: PolicyKind,
    pub alpha: f64,
    pub lambda_c: f64,
    pub baseline: Baseline,
}

impl SamplingPolicy {
    /// Default knobs for each named policy.
    pub fn new(kind: PolicyKind) -> Self {
        let (alpha, lambda_c, baseline) = match kind {
            PolicyKind::Rand => (0.0, 0.0, Baseline::Uniform),
            PolicyKind::ClassBalanced => (0.0, 0.0, Baseline::ClassBalanced),
            PolicyKind::Osag => (1.0, 0.0, Baseline::Uniform),
            PolicyKind::OsagMix => (0.5, 0.0, Baseline::Uniform),
            PolicyKind::LambdaFairloss => (1.0, 1.0, Baseline::Uniform),
        };
        Self {
            kind,
            alpha,
            lambda_c,
            baseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.lambda_c.is_finite() && self.lambda_c >= 0.0) {
            return Err(Error::Config(format!("lambda_c {} must be non-negative", self.lambda_c)));
        }
        Ok(())
    }
}

/// One draw: the sample id and the index of its contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Draw {
    pub sample_id: usize,
    pub contract: usize,
}

/// Two-stage governed sampler over a [`ContractSet`] with computed shares.
#[derive(Debug, Clone)]
pub struct OsagSampler {
    contracts: DiscreteDistribution,
    members: Vec<Vec<usize>>,
}

impl OsagSampler {
    pub fn new(set: &ContractSet) -> Result<Self> {
        let shares = set.shares()?;
        Ok(Self {
            contracts: DiscreteDistribution::new(shares)?,
            members: set.contracts().iter().map(|c| c.member_ids.clone()).collect(),
        })
    }

    /// Consumes exactly two words: one for the contract, one for the member.
    pub fn osag_step(&self, stream: &mut SeededStream) -> Draw {
        let contract = self.contracts.sample(stream);
        let members = &self.members[contract];
        Draw {
            sample_id: members[stream.next_index(members.len())],
            contract,
        }
    }
}

/// `alpha`-mixture of [`OsagSampler`] and a baseline over the set's samples.
#[derive(Debug, Clone)]
pub struct MixedSampler {
    osag: OsagSampler,
    baseline: DiscreteDistribution,
    ids: Vec<usize>,
    contract_of: Vec<usize>,
    shares: Vec<f64>,
    counts: Vec<usize>,
    alpha: f64,
}

impl MixedSampler {
    /// `baseline[i]` is the baseline probability of `ids[i]`; the ids must be
    /// exactly the samples of `set`.
    pub fn new(set: &ContractSet, baseline: DiscreteDistribution, ids: Vec<usize>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        if baseline.len() != ids.len() || ids.len() != set.total_samples() {
            return Err(Error::Shape(format!(
                "baseline covers {} samples, contract set has {}",
                baseline.len(),
                set.total_samples()
            )));
        }
        let contract_of = ids
            .iter()
            .map(|&id| {
                set.contract_of(id)
                    .ok_or_else(|| Error::Input(format!("baseline sample {id} is not in the contract set")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            osag: OsagSampler::new(set)?,
            baseline,
            ids,
            contract_of,
            shares: set.shares()?,
            counts: set.counts(),
            alpha,
        })
    }

    /// Sampler realising `policy` over `samples`, which must be the set's samples.
    pub fn for_policy(policy: &SamplingPolicy, set: &ContractSet, samples: &[Sample]) -> Result<Self> {
        policy.validate()?;
        let baseline = match policy.baseline {
            Baseline::Uniform => DiscreteDistribution::uniform(samples.len())?,
            Baseline::ClassBalanced => class_balanced_distribution(samples)?,
        };
        Self::new(set, baseline, samples.iter().map(|s| s.id).collect(), policy.alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The coin is skipped at `alpha ∈ {0, 1}`, so those endpoints consume the same
    /// words as the pure mechanisms.
    pub fn mixed_step(&self, stream: &mut SeededStream) -> Draw {
        let governed = if self.alpha >= 1.0 {
            true
        } else if self.alpha <= 0.0 {
            false
        } else {
            stream.next_unit() < self.alpha
        };
        if governed {
            self.osag.osag_step(stream)
        } else {
            let i = self.baseline.sample(stream);
            Draw {
                sample_id: self.ids[i],
                contract: self.contract_of[i],
            }
        }
    }

    /// Sample ids in baseline order.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Exact per-sample marginal `α·w_c/n_c + (1-α)·baseline`, aligned with [`Self::ids`].
    pub fn marginal(&self) -> Vec<f64> {
        self.baseline
            .probabilities()
            .iter()
            .zip(&self.contract_of)
            .map(|(b, &c)| {
                self.alpha * self.shares[c] / self.counts[c] as f64 + (1.0 - self.alpha) * b
            })
            .collect()
    }

    /// Exact contract marginal of one draw.
    pub fn contract_marginal(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.shares.len()];
        for (p, &c) in self.marginal().iter().zip(&self.contract_of) {
            q[c] += p;
        }
        q
    }
}

/// Inverse-frequency weights: sample `i` of class `k` gets `1 / (K · count_k)`,
/// where `K` counts the classes present.
pub fn class_balanced_distribution(samples: &[Sample]) -> Result<DiscreteDistribution> {
    if samples.is_empty() {
        return Err(Error::Input("class-balanced distribution over no samples".into()));
    }
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for s in samples {
        *counts.entry(s.label).or_default() += 1;
    }
    let k = counts.len() as f64;
    DiscreteDistribution::from_weights(
        &samples
            .iter()
            .map(|s| 1.0 / (k * counts[&s.label] as f64))
            .collect::<Vec<_>>(),
    )
}

/// One-stage equivalent of the two-stage draw, in contract-then-member order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    pub ids: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn per_sample_weights(set: &ContractSet) -> Result<SampleWeights> {
    let shares = set.shares()?;
    let mut ids = Vec::with_capacity(set.total_samples());
    let mut weights = Vec::with_capacity(set.total_samples());
    for (c, w) in set.contracts().iter().zip(shares) {
        let each = w / c.n() as f64;
        for &id in &c.member_ids {
            ids.push(id);
            weights.push(each);
        }
    }
    Ok(SampleWeights { ids, weights })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::registry::{build_contracts, PriorityLevels};

    fn samples(labels: &[usize], regions: &[&str]) -> Vec<Sample> {
        labels
            .iter()
            .zip(regions)
            .enumerate()
            .map(|(i, (&label, r))| Sample {
                id: i,
                features: vec![0.0],
                label,
                attrs: BTreeMap::from([("region".to_string(), r.to_string())]),
            })
            .collect()
    }

    #[test]
    fn policy_defaults() {
        let p = |k| SamplingPolicy::new(k);
        assert_eq!((p(PolicyKind::Rand).alpha, p(PolicyKind::Rand).lambda_c), (0.0, 0.0));
        assert_eq!((p(PolicyKind::Osag).alpha, p(PolicyKind::Osag).lambda_c), (1.0, 0.0));
        assert_eq!((p(PolicyKind::OsagMix).alpha, p(PolicyKind::OsagMix).lambda_c), (0.5, 0.0));
        let lf = p(PolicyKind::LambdaFairloss);
        assert_eq!((lf.alpha, lf.lambda_c), (1.0, 1.0));
        assert_eq!(p(PolicyKind::ClassBalanced).baseline, Baseline::ClassBalanced);
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("fancy".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn class_balanced_inverse_frequency() {
        let d = class_balanced_distribution(&samples(&[0, 0, 0, 0, 1], &["A"; 5])).unwrap();
        assert_eq!(d.probabilities(), &[0.125, 0.125, 0.125, 0.125, 0.5]);
        let d = class_balanced_distribution(&samples(&[0, 1, 0, 1], &["A"; 4])).unwrap();
        assert_eq!(d.probabilities(), &[0.25; 4]);
        let d = class_balanced_distribution(&samples(&[2, 2, 2], &["A"; 3])).unwrap();
        assert!(d.probabilities().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-16));
    }

    #[test]
    fn per_sample_weight_cases() {
        // Two singleton contracts; the class-count tie makes class 0 rare, so
        // priorities 3 and 7 give shares [0.3, 0.7].
        let s = samples(&[0, 1], &["A", "B"]);
        let set = build_contracts(&s, &["region"], 0.5)
            .unwrap()
            .assign_priorities(3, 7)
            .unwrap()
            .compute_target_shares()
            .unwrap();
        assert_eq!(per_sample_weights(&set).unwrap().weights, set.shares().unwrap());
        assert_eq!(set.shares().unwrap(), vec![0.3, 0.7]);

        // n = [2, 3], w = [0.4, 0.6] is coincidentally uniform.
        let s = samples(&[0, 0, 1, 1, 1], &["A", "A", "B", "B", "B"]);
        let set = build_contracts(&s, &["region"], 0.0).unwrap().assign_priorities(1, 1).unwrap();
        let set = set.compute_target_shares().unwrap();
        let w = per_sample_weights(&set).unwrap();
        assert!(w.weights.iter().all(|x| (x - 0.2).abs() < 1e-15));

        // n = [1, 4], w = [0.5, 0.5] needs priority 4 on the singleton.
        let s = samples(&[1, 0, 0, 0, 0], &["A", "B", "B", "B", "B"]);
        let set = build_contracts(&s, &["region"], 0.5).unwrap().assign_priorities(4, 1).unwrap();
        let set = set.compute_target_shares().unwrap();
        assert_eq!(set.shares().unwrap(), vec![0.5, 0.5]);
        let w = per_sample_weights(&set).unwrap();
        assert_eq!(w.ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(w.weights, vec![0.5, 0.125, 0.125, 0.125, 0.125]);
        let total: f64 = w.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn osag_step_uses_two_words_and_respects_support() {
        let s = samples(&[0, 0, 1], &["A", "A", "B"]);
        let set = build_contracts(&s, &["region"], 0.0).unwrap().assign_priorities(1, 1).unwrap();
        let set = set.compute_target_shares().unwrap();
        let sampler = OsagSampler::new(&set).unwrap();
        let mut stream = SeededStream::new(0);
        for k in 1..=1000u64 {
            let d = sampler.osag_step(&mut stream);
            assert_eq!(set.contract_of(d.sample_id), Some(d.contract));
            assert_eq!(stream.draws(), 2 * k);
        }
    }

    #[test]
    fn shares_missing_is_state_error() {
        let s = samples(&[0, 1], &["A", "B"]);
        let set = build_contracts(&s, &["region"], 0.0).unwrap();
        assert!(matches!(OsagSampler::new(&set), Err(Error::State(_))));
    }

    #[test]
    fn singleton_mixture_marginal() {
        let s = samples(&[0, 1], &["A", "B"]);
        // Class 0 is rare on the tie, so shares [0.9, 0.1] come from priorities 9 and 1.
        let set = build_contracts(&s, &["region"], 0.5).unwrap().assign_priorities(9, 1).unwrap();
        let set = set.compute_target_shares().unwrap();
        assert_eq!(set.shares().unwrap(), vec![0.9, 0.1]);
        let mix = MixedSampler::new(&set, DiscreteDistribution::uniform(2).unwrap(), vec![0, 1], 0.5).unwrap();
        let m = mix.marginal();
        assert!((m[0] - 0.7).abs() < 1e-15 && (m[1] - 0.3).abs() < 1e-15);
        assert!(MixedSampler::new(&set, DiscreteDistribution::uniform(2).unwrap(), vec![0, 1], 1.5).is_err());
    }

    #[test]
    fn alpha_one_matches_osag_draw_for_draw() {
        let s = samples(&[0, 0, 0, 1, 1, 2], &["A", "B", "A", "B", "A", "C"]);
        let set = ContractSet::build(&s, &["region"], 0.34, PriorityLevels::default()).unwrap();
        let osag = OsagSampler::new(&set).unwrap();
        let policy = SamplingPolicy::new(PolicyKind::Osag);
        let mix = MixedSampler::for_policy(&policy, &set, &s).unwrap();
        let (mut a, mut b) = (SeededStream::new(9), SeededStream::new(9));
        for _ in 0..1000 {
            assert_eq!(osag.osag_step(&mut a), mix.mixed_step(&mut b));
        }
    }
}
