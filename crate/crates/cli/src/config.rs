//! TOML run configuration.
//!
//! Every section is optional; missing fields take the documented defaults. The
//! resolved configuration (after command-line overrides) is echoed into each
//! manifest together with its SHA-256.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use osag_core::data::{self, CsvSchema, Dataset, SyntheticSpec};
use osag_core::graph::AdjacencyRule;
use osag_core::registry::{ContractSet, PriorityLevels};
use osag_core::sampling::{Baseline, PolicyKind, SamplingPolicy};
use osag_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Worker threads for parallel sections; 0 lets the pool decide.
    pub jobs: usize,
    pub data: DataConfig,
    pub contracts: ContractConfig,
    pub train: TrainSection,
    pub policies: PolicyConfig,
    pub theory: TheoryConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seeds: vec![0, 1, 2],
            jobs: 0,
            data: DataConfig::default(),
            contracts: ContractConfig::default(),
            train: TrainSection::default(),
            policies: PolicyConfig::default(),
            theory: TheoryConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    pub csv: Option<CsvSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            csv: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjacency {
    /// Contracts agreeing on every key part but the last.
    SharedPrefix,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractConfig {
    /// Attributes forming the key; the rare flag is appended.
    pub key_attributes: Vec<String>,
    pub rare_quantile: f64,
    pub base_priority: u32,
    pub rare_priority: u32,
    /// Extra attribute used by `ablate` to refine the contracts.
    pub refine_attribute: Option<String>,
    pub adjacency: Adjacency,
}

impl Default for ContractConfig {
    fn default() -> Self {
        Self {
            key_attributes: vec!["dataset".into(), "region".into()],
            rare_quantile: 0.2,
            base_priority: 1,
            rare_priority: 3,
            refine_attribute: Some("subgroup".into()),
            adjacency: Adjacency::SharedPrefix,
        }
    }
}

impl ContractConfig {
    pub fn levels(&self) -> PriorityLevels {
        PriorityLevels {
            base: self.base_priority,
            rare: self.rare_priority,
        }
    }

    pub fn build(&self, train: &Dataset) -> CliResult<ContractSet> {
        Ok(ContractSet::build(
            &train.samples,
            &self.key_attributes,
            self.rare_quantile,
            self.levels(),
        )?)
    }

    pub fn adjacency_rule(&self, set: &ContractSet) -> AdjacencyRule {
        match self.adjacency {
            Adjacency::SharedPrefix => AdjacencyRule::default_for(set),
            Adjacency::Complete => AdjacencyRule::CompleteGraph,
        }
    }
}

/// Training knobs shared by every policy; policy and seed are filled per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub test_fraction: f64,
    pub loss_bound: f64,
    pub curve_every: u64,
    pub cov_window: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            hidden: t.hidden,
            test_fraction: t.test_fraction,
            loss_bound: t.loss_bound,
            curve_every: t.curve_every,
            cov_window: t.cov_window,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, policy: SamplingPolicy, seed: u64) -> TrainConfig {
        TrainConfig {
            policy,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            hidden: self.hidden,
            seed,
            test_fraction: self.test_fraction,
            loss_bound: self.loss_bound,
            curve_every: self.curve_every,
            cov_window: self.cov_window,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyOverride {
    pub alpha: Option<f64>,
    pub lambda_c: Option<f64>,
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub names: Vec<PolicyKind>,
    pub overrides: BTreeMap<PolicyKind, PolicyOverride>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            names: PolicyKind::ALL.to_vec(),
            overrides: BTreeMap::new(),
        }
    }
}

impl PolicyConfig {
    pub fn resolve(&self, kind: PolicyKind) -> SamplingPolicy {
        let mut p = SamplingPolicy::new(kind);
        if let Some(o) = self.overrides.get(&kind) {
            p.alpha = o.alpha.unwrap_or(p.alpha);
            p.lambda_c = o.lambda_c.unwrap_or(p.lambda_c);
            p.baseline = o.baseline.unwrap_or(p.baseline);
        }
        p
    }

    pub fn resolved(&self) -> Vec<SamplingPolicy> {
        self.names.iter().map(|&k| self.resolve(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub seed: u64,
    /// Concentration sweep: trials per `(T, m)` cell.
    pub trials: usize,
    pub steps: Vec<u64>,
    pub epsilons: Vec<f64>,
    /// Contract counts; shares are `w_c ∝ c + 1`.
    pub contract_counts: Vec<usize>,
    pub decay_trials: usize,
    pub decay_contracts: usize,
    pub decay_steps: Vec<u64>,
    /// Allowed spread of `mean E_cov · √T` across the decay grid.
    pub decay_factor: f64,
    pub risk_trials: usize,
    pub risk_max_contracts: usize,
    pub risk_bound: f64,
    pub graph_trials: usize,
    pub graph_max_contracts: usize,
    pub refinement_constructions: usize,
    /// Multiplies the risk and graph bound right-hand sides; a value well below 1
    /// must make `verify-theory` fail.
    pub rhs_scale: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 2000,
            steps: vec![100, 1000, 10_000],
            epsilons: vec![0.01, 0.05, 0.1],
            contract_counts: vec![2, 10],
            decay_trials: 1000,
            decay_contracts: 4,
            decay_steps: vec![100, 1000, 10_000],
            decay_factor: 2.0,
            risk_trials: 100_000,
            risk_max_contracts: 32,
            risk_bound: 1.0,
            graph_trials: 10_000,
            graph_max_contracts: 12,
            refinement_constructions: 1000,
            rhs_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub baseline: PolicyKind,
    pub governed: PolicyKind,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            baseline: PolicyKind::Rand,
            governed: PolicyKind::Osag,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub cov_window: Option<u64>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(mut self, o: &Overrides) -> CliResult<Self> {
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if o.cov_window.is_some() {
            self.train.cov_window = o.cov_window;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.policies.names.is_empty() {
            return bad("at least one policy is required".into());
        }
        for p in self.policies.resolved() {
            p.validate()?;
        }
        self.train
            .to_train_config(SamplingPolicy::new(PolicyKind::Rand), 0)
            .validate()?;
        match self.data.source {
            DataSource::Synthetic => self.data.synthetic.validate()?,
            DataSource::Csv if self.data.csv.is_none() => {
                return bad("data.source = \"csv\" needs a [data.csv] section".into())
            }
            DataSource::Csv => {}
        }
        if self.contracts.key_attributes.is_empty() {
            return bad("contracts.key_attributes must not be empty".into());
        }
        if !(0.0..=1.0).contains(&self.contracts.rare_quantile) {
            return bad(format!("rare_quantile {} outside [0, 1]", self.contracts.rare_quantile));
        }
        if self.contracts.base_priority == 0 || self.contracts.rare_priority == 0 {
            return bad("priorities must be positive".into());
        }
        let t = &self.theory;
        if !(t.rhs_scale > 0.0 && t.rhs_scale.is_finite()) {
            return bad("theory.rhs_scale must be positive".into());
        }
        if t.contract_counts.contains(&0) || t.decay_contracts == 0 {
            return bad("theory contract counts must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_dataset(&self) -> CliResult<Dataset> {
        match self.data.source {
            DataSource::Synthetic => Ok(data::generate(&self.data.synthetic)?),
            DataSource::Csv => {
                let src = self.data.csv.as_ref().expect("validated");
                Ok(data::load_csv(&src.path, &src.schema)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_overrides() {
        let cfg = RunConfig::from_toml(
            r#"
            seeds = [4]
            [data.synthetic]
            noise = 0.5
            [train]
            steps = 10
            [policies]
            names = ["rand", "osag-mix"]
            [policies.overrides.osag-mix]
            alpha = 0.25
            baseline = "class-balanced"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.data.synthetic.noise, 0.5);
        assert_eq!(cfg.train.steps, 10);
        let p = cfg.policies.resolved();
        assert_eq!(p[1].alpha, 0.25);
        assert_eq!(p[1].baseline, Baseline::ClassBalanced);
        let cfg = cfg
            .apply(&Overrides {
                seeds: Some(vec![1, 2]),
                cov_window: Some(50),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.train.cov_window, Some(50));
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "seeds = []",
            "bogus = 1",
            "[train]\nsteps = 0",
            "[policies]\nnames = [\"nope\"]",
            "[data]\nsource = \"csv\"",
            "[data.synthetic]\nclasses = 1",
            "[policies.overrides.osag]\nalpha = 2.0",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
