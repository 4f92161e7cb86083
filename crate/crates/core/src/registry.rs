//! Contract registry: keying samples into contracts, rare flags, priorities and
//! target service shares.
//!
//! A contract key is the ordered list of the scheme's attribute values followed by
//! a rare-flag part. Rarity is a class-level property computed from global class
//! frequencies: classes are sorted by ascending count (ties by lower class index)
//! and the first `⌈rare_quantile · K⌉` are rare. Target shares follow
//! `w_c = priority_c · n_c / Σ priority · n`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::data::{ceil_fraction, Sample};
use crate::error::{Error, Result};

pub const RARE_PART: &str = "rare";
pub const COMMON_PART: &str = "common";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContractKey(pub Vec<String>);

impl ContractKey {
    pub fn parts(&self) -> &[String] {
        &self.0
    }

    pub fn prefix(&self, k: usize) -> &[String] {
        &self.0[..k.min(self.0.len())]
    }
}

impl std::fmt::Display for ContractKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.join("/"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contract {
    pub key: ContractKey,
    pub member_ids: Vec<usize>,
    pub rare: bool,
    pub priority: Option<u32>,
    pub target_share: Option<f64>,
}

impl Contract {
    pub fn n(&self) -> usize {
        self.member_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyScheme {
    pub attributes: Vec<String>,
    pub rare_quantile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityLevels {
    pub base: u32,
    pub rare: u32,
}

impl Default for PriorityLevels {
    fn default() -> Self {
        Self { base: 1, rare: 3 }
    }
}

/// Partition of a sample set into contracts. Contracts are ordered by key.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractSet {
    scheme: KeyScheme,
    rare_classes: BTreeSet<usize>,
    contracts: Vec<Contract>,
    sample_to_contract: BTreeMap<usize, usize>,
    index: BTreeMap<ContractKey, usize>,
    levels: Option<PriorityLevels>,
}

/// Classes in the bottom `rare_quantile` fraction by sample count.
pub fn rare_classes(samples: &[Sample], rare_quantile: f64) -> BTreeSet<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.label).or_default() += 1;
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().map(|(k, n)| (n, k)).collect();
    ranked.sort_unstable();
    let n_rare = ceil_fraction(rare_quantile, ranked.len());
    ranked[..n_rare].iter().map(|&(_, k)| k).collect()
}

pub fn build_contracts<S: AsRef<str>>(
    samples: &[Sample],
    key_scheme: &[S],
    rare_quantile: f64,
) -> Result<ContractSet> {
    if samples.is_empty() {
        return Err(Error::Input("cannot build contracts from an empty sample list".into()));
    }
    if !(0.0..1.0).contains(&rare_quantile) {
        return Err(Error::Config(format!("rare quantile {rare_quantile} must lie in [0, 1)")));
    }
    let scheme = KeyScheme {
        attributes: key_scheme.iter().map(|a| a.as_ref().to_string()).collect(),
        rare_quantile,
    };
    let rare = rare_classes(samples, rare_quantile);
    let mut groups: BTreeMap<ContractKey, Vec<usize>> = BTreeMap::new();
    for s in samples {
        let key = key_with(&scheme, &rare, s)?;
        groups.entry(key).or_default().push(s.id);
    }
    let mut contracts = Vec::with_capacity(groups.len());
    let mut sample_to_contract = BTreeMap::new();
    let mut index = BTreeMap::new();
    for (c, (key, member_ids)) in groups.into_iter().enumerate() {
        for &id in &member_ids {
            if sample_to_contract.insert(id, c).is_some() {
                return Err(Error::Input(format!("duplicate sample id {id}")));
            }
        }
        index.insert(key.clone(), c);
        contracts.push(Contract {
            rare: key.0.last().map(String::as_str) == Some(RARE_PART),
            key,
            member_ids,
            priority: None,
            target_share: None,
        });
    }
    Ok(ContractSet {
        scheme,
        rare_classes: rare,
        contracts,
        sample_to_contract,
        index,
        levels: None,
    })
}

fn key_with(scheme: &KeyScheme, rare: &BTreeSet<usize>, sample: &Sample) -> Result<ContractKey> {
    let mut parts = scheme
        .attributes
        .iter()
        .map(|a| sample.attr(a).map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    parts.push(if rare.contains(&sample.label) { RARE_PART } else { COMMON_PART }.to_string());
    Ok(ContractKey(parts))
}

impl ContractSet {
    pub fn assign_priorities(mut self, rare_priority: u32, base_priority: u32) -> Result<Self> {
        if rare_priority == 0 || base_priority == 0 {
            return Err(Error::Config("priorities must be positive".into()));
        }
        for c in &mut self.contracts {
            c.priority = Some(if c.rare { rare_priority } else { base_priority });
            c.target_share = None;
        }
        self.levels = Some(PriorityLevels {
            base: base_priority,
            rare: rare_priority,
        });
        Ok(self)
    }

    pub fn compute_target_shares(mut self) -> Result<Self> {
        let mass: Vec<f64> = self
            .contracts
            .iter()
            .map(|c| {
                c.priority
                    .map(|p| f64::from(p) * c.n() as f64)
                    .ok_or_else(|| Error::State(format!("contract {} has no priority", c.key)))
            })
            .collect::<Result<_>>()?;
        let total: f64 = mass.iter().sum();
        for (c, m) in self.contracts.iter_mut().zip(mass) {
            c.target_share = Some(m / total);
        }
        Ok(self)
    }

    /// Builds, prioritises and normalises in one go.
    pub fn build<S: AsRef<str>>(
        samples: &[Sample],
        key_scheme: &[S],
        rare_quantile: f64,
        levels: PriorityLevels,
    ) -> Result<Self> {
        build_contracts(samples, key_scheme, rare_quantile)?
            .assign_priorities(levels.rare, levels.base)?
            .compute_target_shares()
    }

    /// Splits every contract by the values of `extra_attribute`, re-applying the
    /// rare, priority and share rules of this set.
    pub fn refine_contracts(&self, samples: &[Sample], extra_attribute: &str) -> Result<ContractSet> {
        if samples.len() != self.sample_to_contract.len()
            || samples.iter().any(|s| !self.sample_to_contract.contains_key(&s.id))
        {
            return Err(Error::Input("refinement samples differ from the contract set's samples".into()));
        }
        let mut attrs = self.scheme.attributes.clone();
        attrs.push(extra_attribute.to_string());
        let mut fine = build_contracts(samples, &attrs, self.scheme.rare_quantile)?;
        if let Some(levels) = self.levels {
            fine = fine.assign_priorities(levels.rare, levels.base)?;
            if self.contracts.iter().all(|c| c.target_share.is_some()) {
                fine = fine.compute_target_shares()?;
            }
        }
        Ok(fine)
    }

    /// Key a (possibly unseen) sample would receive under this scheme.
    pub fn key_for(&self, sample: &Sample) -> Result<ContractKey> {
        key_with(&self.scheme, &self.rare_classes, sample)
    }

    pub fn lookup(&self, key: &ContractKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn contract_of(&self, sample_id: usize) -> Option<usize> {
        self.sample_to_contract.get(&sample_id).copied()
    }

    pub fn contracts(&self) -> &[Contract] {
        &self.contracts
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    pub fn total_samples(&self) -> usize {
        self.sample_to_contract.len()
    }

    pub fn scheme(&self) -> &KeyScheme {
        &self.scheme
    }

    pub fn levels(&self) -> Option<PriorityLevels> {
        self.levels
    }

    pub fn rare_class_set(&self) -> &BTreeSet<usize> {
        &self.rare_classes
    }

    pub fn counts(&self) -> Vec<usize> {
        self.contracts.iter().map(Contract::n).collect()
    }

    pub fn shares(&self) -> Result<Vec<f64>> {
        self.contracts
            .iter()
            .map(|c| {
                c.target_share
                    .ok_or_else(|| Error::State("target shares have not been computed".into()))
            })
            .collect()
    }

    pub fn priorities(&self) -> Result<Vec<u32>> {
        self.contracts
            .iter()
            .map(|c| {
                c.priority
                    .ok_or_else(|| Error::State("priorities have not been assigned".into()))
            })
            .collect()
    }

    /// Highest assigned priority level, if any.
    pub fn max_priority(&self) -> Option<u32> {
        self.contracts.iter().filter_map(|c| c.priority).max()
    }

    /// Contract distribution induced by uniform sampling over samples, `n_c / N`.
    pub fn data_marginal(&self) -> Vec<f64> {
        let total = self.total_samples() as f64;
        self.contracts.iter().map(|c| c.n() as f64 / total).collect()
    }

    pub fn to_document(&self) -> ContractSetDocument {
        ContractSetDocument {
            scheme: SchemeDocument {
                attributes: self.scheme.attributes.clone(),
                rare_quantile: self.scheme.rare_quantile,
                rare_classes: self.rare_classes.iter().copied().collect(),
                base_priority: self.levels.map(|l| l.base),
                rare_priority: self.levels.map(|l| l.rare),
            },
            m: self.len(),
            total_samples: self.total_samples(),
            contracts: self
                .contracts
                .iter()
                .map(|c| ContractDocument {
                    key_parts: c.key.0.clone(),
                    member_count: c.n(),
                    priority: c.priority,
                    target_share: c.target_share.map(share_literal),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }
}

/// 17 significant digits, which round-trips every `f64` exactly.
fn share_literal(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.16e}")).expect("exponent notation is a JSON number")
}

/// Serialized form of a [`ContractSet`].
#[derive(Debug, Serialize, Deserialize)]
pub struct ContractSetDocument {
    pub scheme: SchemeDocument,
    pub m: usize,
    pub total_samples: usize,
    pub contracts: Vec<ContractDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SchemeDocument {
    pub attributes: Vec<String>,
    pub rare_quantile: f64,
    pub rare_classes: Vec<usize>,
    pub base_priority: Option<u32>,
    pub rare_priority: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContractDocument {
    pub key_parts: Vec<String>,
    pub member_count: usize,
    pub priority: Option<u32>,
    pub target_share: Option<Box<RawValue>>,
}

impl ContractDocument {
    pub fn share(&self) -> Option<f64> {
        self.target_share.as_ref().and_then(|r| r.get().parse().ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: usize, label: usize, attrs: &[(&str, &str)]) -> Sample {
        Sample {
            id,
            features: vec![0.0],
            label,
            attrs: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    fn region_samples(labels: &[usize], regions: &[&str]) -> Vec<Sample> {
        labels
            .iter()
            .zip(regions)
            .enumerate()
            .map(|(i, (&y, r))| sample(i, y, &[("region", r)]))
            .collect()
    }

    #[test]
    fn minority_class_gets_own_rare_contract() {
        let samples = region_samples(&[0, 0, 0, 0, 1, 1], &["A"; 6]);
        let set = build_contracts(&samples, &["region"], 0.5).unwrap();
        assert_eq!(set.len(), 2);
        let c0 = &set.contracts()[0];
        let c1 = &set.contracts()[1];
        assert_eq!(c0.key.parts(), ["A", COMMON_PART]);
        assert_eq!((c0.n(), c0.rare), (4, false));
        assert_eq!(c1.key.parts(), ["A", RARE_PART]);
        assert_eq!((c1.n(), c1.rare), (2, true));
        assert!(c0.target_share.is_none());
        let set = set.assign_priorities(3, 1).unwrap();
        assert_eq!(set.priorities().unwrap(), vec![1, 3]);
    }

    #[test]
    fn zero_quantile_flags_nothing() {
        let samples = region_samples(&[0, 1, 2, 1], &["A", "A", "B", "B"]);
        let set = build_contracts(&samples, &["region"], 0.0).unwrap();
        assert!(set.contracts().iter().all(|c| !c.rare));
        assert_eq!(set.len(), 2);
        assert_eq!(set.counts(), vec![2, 2]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_contracts::<&str>(&[], &["region"], 0.2),
            Err(Error::Input(_))
        ));
        let samples = vec![sample(0, 0, &[("region", "A")]), sample(7, 0, &[])];
        match build_contracts(&samples, &["region"], 0.2) {
            Err(Error::Keying { sample_id, attribute }) => {
                assert_eq!((sample_id, attribute.as_str()), (7, "region"));
            }
            other => panic!("{other:?}"),
        }
        let ok = build_contracts(&samples[..1], &["region"], 0.2).unwrap();
        assert!(matches!(ok.clone().assign_priorities(0, 1), Err(Error::Config(_))));
        assert!(matches!(ok.clone().assign_priorities(3, 0), Err(Error::Config(_))));
        assert!(matches!(ok.compute_target_shares(), Err(Error::State(_))));
    }

    #[test]
    fn rare_ties_break_toward_lower_class() {
        // Classes 1 and 2 tie on count; only one slot is rare.
        let samples = region_samples(&[0, 0, 0, 1, 1, 2, 2, 3, 3, 3], &["A"; 10]);
        assert_eq!(rare_classes(&samples, 0.25), BTreeSet::from([1]));
        assert_eq!(rare_classes(&samples, 0.5), BTreeSet::from([1, 2]));
    }

    #[test]
    fn priorities_follow_flags() {
        // Flags [F, T, T] by key order.
        let samples = region_samples(&[0, 0, 0, 1, 1], &["A", "A", "A", "A", "B"]);
        let set = build_contracts(&samples, &["region"], 0.5).unwrap();
        let flags: Vec<bool> = set.contracts().iter().map(|c| c.rare).collect();
        assert_eq!(flags, vec![false, true, true]);
        let set = set.assign_priorities(3, 1).unwrap();
        assert_eq!(set.priorities().unwrap(), vec![1, 3, 3]);
    }

    #[test]
    fn shares_priority_times_count() {
        let mut samples = Vec::new();
        for i in 0..150 {
            samples.push(sample(i, usize::from(i >= 100), &[("region", "A")]));
        }
        let set = ContractSet::build(&samples, &["region"], 0.5, PriorityLevels::default()).unwrap();
        assert_eq!(set.counts(), vec![100, 50]);
        let w = set.shares().unwrap();
        assert!((w[0] - 0.4).abs() < 1e-15 && (w[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn equal_priorities_reduce_to_counts() {
        let samples = region_samples(&[0, 0, 0, 1, 1, 1, 1, 1], &["A", "B", "C", "D", "A", "B", "C", "D"]);
        let set = build_contracts(&samples, &["region"], 0.0)
            .unwrap()
            .assign_priorities(1, 1)
            .unwrap()
            .compute_target_shares()
            .unwrap();
        assert_eq!(set.shares().unwrap(), vec![0.25; 4]);
        let single = ContractSet::build(&samples, &["dataset"; 0], 0.0, PriorityLevels::default()).unwrap();
        assert_eq!(single.shares().unwrap(), vec![1.0]);
    }

    #[test]
    fn refinement_splits_by_extra_attribute() {
        let samples: Vec<Sample> = ["x", "x", "y", "y"]
            .iter()
            .enumerate()
            .map(|(i, g)| sample(i, 0, &[("region", "A"), ("sub", g)]))
            .collect();
        let coarse = ContractSet::build(&samples, &["region"], 0.0, PriorityLevels::default()).unwrap();
        let fine = coarse.refine_contracts(&samples, "sub").unwrap();
        assert_eq!(fine.counts(), vec![2, 2]);
        assert_eq!(fine.shares().unwrap(), vec![0.5, 0.5]);
        let same = coarse.refine_contracts(&samples, "region").unwrap();
        assert_eq!(same.len(), 1);
        assert!(matches!(coarse.refine_contracts(&samples, "nope"), Err(Error::Keying { .. })));
    }

    #[test]
    fn refinement_counts_distinct_pairs() {
        // Five coarse regions; region "E" mixes three sub-values.
        let layout = [("A", "p"), ("B", "p"), ("C", "q"), ("D", "q"), ("E", "p"), ("E", "q"), ("E", "r")];
        let samples: Vec<Sample> = layout
            .iter()
            .enumerate()
            .map(|(i, (r, g))| sample(i, 0, &[("region", r), ("sub", g)]))
            .collect();
        let coarse = build_contracts(&samples, &["region"], 0.0).unwrap();
        assert_eq!(coarse.len(), 5);
        assert_eq!(coarse.refine_contracts(&samples, "sub").unwrap().len(), 7);
    }

    #[test]
    fn json_shares_round_trip_bit_exact() {
        let samples = region_samples(&[0, 0, 0, 1, 1, 2, 0], &["A", "B", "C", "A", "B", "C", "C"]);
        let set = ContractSet::build(&samples, &["region"], 0.34, PriorityLevels::default()).unwrap();
        let doc: ContractSetDocument = serde_json::from_str(&set.to_json().unwrap()).unwrap();
        let shares: Vec<f64> = doc.contracts.iter().map(|c| c.share().unwrap()).collect();
        assert_eq!(shares, set.shares().unwrap());
        let text = set.to_json().unwrap();
        let literal = doc.contracts[0].target_share.as_ref().unwrap().get().to_string();
        assert_eq!(literal.split('e').next().unwrap().replace('.', "").len(), 17);
        assert!(text.contains(&literal));
    }
}
