#![allow(dead_code)]

use std::collections::BTreeMap;

use osag_core::data::Sample;
use osag_core::registry::{ContractSet, PriorityLevels};
use osag_core::rng::SeededStream;

pub fn sample(id: usize, label: usize, region: &str, sub: &str) -> Sample {
    Sample {
        id,
        features: vec![id as f64, label as f64],
        label,
        attrs: BTreeMap::from([
            ("region".to_string(), region.to_string()),
            ("sub".to_string(), sub.to_string()),
        ]),
    }
}

/// `labels[i]` gives the class of sample `i`; every sample sits in region `A`.
pub fn labelled(labels: &[usize]) -> Vec<Sample> {
    labels.iter().enumerate().map(|(i, &y)| sample(i, y, "A", "x")).collect()
}

/// Random samples over a few regions, classes and sub-groups, with skewed class sizes.
pub fn random_samples(s: &mut SeededStream, n: usize) -> Vec<Sample> {
    let regions = 1 + s.next_index(4);
    let classes = 2 + s.next_index(4);
    (0..n)
        .map(|i| {
            // Squaring skews labels toward low indices so rarity is meaningful.
            let u = s.next_unit();
            let label = ((u * u) * classes as f64) as usize;
            let region = format!("r{}", s.next_index(regions));
            let sub = format!("g{}", s.next_index(3));
            sample(i, label, &region, &sub)
        })
        .collect()
}

pub fn random_set(s: &mut SeededStream, n: usize) -> (Vec<Sample>, ContractSet) {
    let samples = random_samples(s, n);
    let q = [0.0, 0.2, 0.5][s.next_index(3)];
    let levels = PriorityLevels {
        base: 1 + s.next_index(2) as u32,
        rare: 1 + s.next_index(5) as u32,
    };
    let set = ContractSet::build(&samples, &["region"], q, levels).unwrap();
    (samples, set)
}

/// Largest `|freq − p| / SE` over entries, with `SE = √(p(1−p)/draws)`.
pub fn max_z(counts: &[u64], p: &[f64], draws: u64) -> f64 {
    counts
        .iter()
        .zip(p)
        .map(|(&c, &p)| {
            let f = c as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            if se == 0.0 {
                if f == p { 0.0 } else { f64::INFINITY }
            } else {
                (f - p).abs() / se
            }
        })
        .fold(0.0, f64::max)
}
