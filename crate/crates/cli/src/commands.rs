//! Subcommand implementations. Each returns its in-memory result after writing
//! artifacts under the configured output directory.
//!
//! Independent runs fan out over a rayon pool and are reduced in `(policy, seed)`
//! order, so every artifact except the manifest timestamp is byte-stable.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use osag_core::data::{stratified_split, Dataset};
use osag_core::graph::{build_graph, lipschitz_beta_observed};
use osag_core::registry::ContractSet;
use osag_core::sampling::{PolicyKind, SamplingPolicy};
use osag_core::theory::{
    coverage_decay_curve, graph_bound_sweep, mean_std, refinement_beta_study, risk_bound_sweep,
    run_concentration_sweep, ConcentrationReport, DecayCurve, GraphSweepReport, RefinementStudy, RiskSweepReport,
};
use osag_core::trainer::{self, RunMetrics, TrainOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config_sha256: String,
    pub created_unix: u64,
    pub outputs: Vec<String>,
    pub config: &'a RunConfig,
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn create(path: &Path) -> CliResult<fs::File> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn relative(cfg: &RunConfig, path: &Path) -> String {
    path.strip_prefix(&cfg.out_dir).unwrap_or(path).display().to_string()
}

fn write_manifest(cfg: &RunConfig, command: &str, outputs: &[PathBuf]) -> CliResult<PathBuf> {
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        created_unix,
        outputs: outputs.iter().map(|p| relative(cfg, p)).collect(),
        config: cfg,
    };
    let path = cfg.out_dir.join(format!("manifest_{command}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Runs `f` on a pool of `jobs` threads (0 = rayon default).
pub fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
    Ok(pool.install(f))
}

// gen-data

pub fn gen_data(cfg: &RunConfig) -> CliResult<PathBuf> {
    if cfg.data.source != crate::config::DataSource::Synthetic {
        return Err(CliError::Config("gen-data needs data.source = \"synthetic\"".into()));
    }
    let data = cfg.load_dataset()?;
    let path = cfg.out_dir.join("data.csv");
    data.write_csv(create(&path)?)?;
    write_manifest(cfg, "gen-data", std::slice::from_ref(&path))?;
    Ok(path)
}

// train

/// Split and contract set for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub set: ContractSet,
}

pub fn prepare(cfg: &RunConfig, data: &Dataset, seed: u64) -> CliResult<Prepared> {
    let (train, test) = stratified_split(data, cfg.train.test_fraction, seed)?;
    let set = cfg.contracts.build(&train)?;
    Ok(Prepared { seed, train, test, set })
}

pub fn run_one(cfg: &RunConfig, p: &Prepared, set: &ContractSet, policy: SamplingPolicy) -> CliResult<TrainOutcome<f64>> {
    let tc = cfg.train.to_train_config(policy, p.seed);
    Ok(trainer::train::<f64>(&p.train, &p.test, set, &tc)?)
}

fn run_stem(policy: &str, seed: u64) -> String {
    format!("{policy}_seed{seed}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values.iter().copied());
        Some(Stat { mean, std, n: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub alpha: f64,
    pub lambda_c: f64,
    pub seeds: Vec<u64>,
    pub acc_all: Stat,
    /// Over seeds where the maximum-priority test set is non-empty.
    pub acc_high: Option<Stat>,
    pub prio_cov_err: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn row(&self, policy: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

/// Groups runs by policy (in `order`, then unknown names alphabetically) and
/// aggregates over seeds in ascending order.
pub fn summarize(runs: &[RunMetrics], order: &[PolicyKind]) -> Summary {
    let mut groups: BTreeMap<String, Vec<&RunMetrics>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.policy.clone()).or_default().push(r);
    }
    let mut names: Vec<String> = order
        .iter()
        .map(|k| k.name().to_string())
        .filter(|n| groups.contains_key(n))
        .collect();
    for n in groups.keys() {
        if !names.contains(n) {
            names.push(n.clone());
        }
    }
    let rows = names
        .into_iter()
        .map(|name| {
            let mut runs = groups.remove(&name).unwrap_or_default();
            runs.sort_by_key(|r| r.seed);
            let pick = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(r)).collect() };
            SummaryRow {
                alpha: runs[0].alpha,
                lambda_c: runs[0].lambda_c,
                seeds: runs.iter().map(|r| r.seed).collect(),
                acc_all: Stat::of(&pick(&|r| Some(r.acc_all))).expect("group is non-empty"),
                acc_high: Stat::of(&pick(&|r| r.acc_high)),
                prio_cov_err: Stat::of(&pick(&|r| Some(r.prio_cov_err))).expect("group is non-empty"),
                policy: name,
            }
        })
        .collect();
    Summary { rows }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `summary.json`, `summary.csv` and the plot-ready `tradeoff.csv`.
pub fn write_summary(cfg: &RunConfig, summary: &Summary) -> CliResult<Vec<PathBuf>> {
    let json = cfg.out_dir.join("summary.json");
    write_json(&json, summary)?;

    let csv_path = cfg.out_dir.join("summary.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    w.write_record([
        "policy",
        "n_seeds",
        "acc_all_mean",
        "acc_all_std",
        "acc_high_mean",
        "acc_high_std",
        "prio_cov_err_mean",
        "prio_cov_err_std",
    ])?;
    for r in &summary.rows {
        w.write_record([
            r.policy.clone(),
            r.seeds.len().to_string(),
            r.acc_all.mean.to_string(),
            r.acc_all.std.to_string(),
            opt(r.acc_high.map(|s| s.mean)),
            opt(r.acc_high.map(|s| s.std)),
            r.prio_cov_err.mean.to_string(),
            r.prio_cov_err.std.to_string(),
        ])?;
    }
    w.flush()?;

    let trade = cfg.out_dir.join("tradeoff.csv");
    let mut w = csv::Writer::from_writer(create(&trade)?);
    w.write_record(["policy", "metric", "x_prio_cov_err", "x_err", "y", "y_err"])?;
    for r in &summary.rows {
        let x = (r.prio_cov_err.mean.to_string(), r.prio_cov_err.std.to_string());
        w.write_record([&r.policy, "acc_all", &x.0, &x.1, &r.acc_all.mean.to_string(), &r.acc_all.std.to_string()])?;
        if let Some(h) = r.acc_high {
            w.write_record([&r.policy, "acc_high", &x.0, &x.1, &h.mean.to_string(), &h.std.to_string()])?;
        }
    }
    w.flush()?;
    Ok(vec![json, csv_path, trade])
}

pub fn train(cfg: &RunConfig) -> CliResult<Summary> {
    let data = cfg.load_dataset()?;
    let prepared: Vec<Prepared> = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare(cfg, &data, s))
        .collect::<CliResult<_>>()?;
    let mut outputs = Vec::new();
    for p in &prepared {
        let path = cfg.out_dir.join(format!("contracts_seed{}.json", p.seed));
        let mut f = create(&path)?;
        f.write_all(p.set.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        outputs.push(path);
    }

    let policies = cfg.policies.resolved();
    let jobs: Vec<(SamplingPolicy, &Prepared)> = policies
        .iter()
        .flat_map(|&pol| prepared.iter().map(move |p| (pol, p)))
        .collect();
    let outcomes: Vec<TrainOutcome<f64>> = jobs
        .par_iter()
        .map(|(pol, p)| run_one(cfg, p, &p.set, *pol))
        .collect::<CliResult<_>>()?;

    let runs_dir = cfg.out_dir.join("runs");
    for o in &outcomes {
        let stem = run_stem(&o.metrics.policy, o.metrics.seed);
        let json = runs_dir.join(format!("{stem}.json"));
        write_json(&json, &o.metrics)?;
        let curve = runs_dir.join(format!("{stem}_coverage.csv"));
        o.curve.write_csv(create(&curve)?)?;
        outputs.extend([json, curve]);
    }
    let metrics: Vec<RunMetrics> = outcomes.into_iter().map(|o| o.metrics).collect();
    let summary = summarize(&metrics, &cfg.policies.names);
    outputs.extend(write_summary(cfg, &summary)?);
    write_manifest(cfg, "train", &outputs)?;
    Ok(summary)
}

// report

/// Rebuilds the summary from the run JSONs under `out_dir/runs`.
pub fn report(cfg: &RunConfig) -> CliResult<Summary> {
    let dir = cfg.out_dir.join("runs");
    let entries = fs::read_dir(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Io(format!("no run files in {}", dir.display())));
    }
    let runs = paths.iter().map(|p| read_json(p)).collect::<CliResult<Vec<RunMetrics>>>()?;
    let summary = summarize(&runs, &cfg.policies.names);
    let outputs = write_summary(cfg, &summary)?;
    write_manifest(cfg, "report", &outputs)?;
    Ok(summary)
}

// verify-theory

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationCell {
    pub weights: Vec<f64>,
    pub report: ConcentrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationSummary {
    pub cells: Vec<ConcentrationCell>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecaySummary {
    pub curve: DecayCurve,
    pub weights: Vec<f64>,
    pub sqrt_t_ratios: Vec<f64>,
    pub factor: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryOutcome {
    pub concentration: ConcentrationSummary,
    pub decay: DecaySummary,
    pub risk: RiskSweepReport,
    pub graph: GraphSweepReport,
    pub refinement: RefinementStudy,
}

impl TheoryOutcome {
    pub fn holds(&self) -> bool {
        self.concentration.holds && self.decay.holds && self.risk.holds && self.graph.holds
    }
}

/// Shares `w_c ∝ c + 1`.
pub fn linear_shares(m: usize) -> Vec<f64> {
    let total = (m * (m + 1)) as f64 / 2.0;
    (1..=m).map(|c| c as f64 / total).collect()
}

/// Runs every sweep, writes `theory/*`, and fails with an assertion error if any
/// asserted bound is violated.
pub fn verify_theory(cfg: &RunConfig) -> CliResult<TheoryOutcome> {
    let outcome = theory_outcome(cfg)?;
    let dir = cfg.out_dir.join("theory");
    let mut outputs = Vec::new();
    for (name, value) in [
        ("concentration", serde_json::to_value(&outcome.concentration)?),
        ("decay", serde_json::to_value(&outcome.decay)?),
        ("risk_bound", serde_json::to_value(&outcome.risk)?),
        ("graph_bound", serde_json::to_value(&outcome.graph)?),
        ("refinement", serde_json::to_value(&outcome.refinement)?),
    ] {
        let path = dir.join(format!("{name}.json"));
        write_json(&path, &value)?;
        outputs.push(path);
    }
    let csv_path = dir.join("decay.csv");
    outcome.decay.curve.write_csv(create(&csv_path)?)?;
    outputs.push(csv_path);
    write_manifest(cfg, "verify-theory", &outputs)?;
    if !outcome.holds() {
        let failed: Vec<&str> = [
            ("concentration", outcome.concentration.holds),
            ("decay", outcome.decay.holds),
            ("risk bound", outcome.risk.holds),
            ("graph bound", outcome.graph.holds),
        ]
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| n)
        .collect();
        return Err(CliError::Assertion(format!("violated: {}", failed.join(", "))));
    }
    Ok(outcome)
}

pub fn theory_outcome(cfg: &RunConfig) -> CliResult<TheoryOutcome> {
    let t = &cfg.theory;
    let mut cells = Vec::new();
    for &m in &t.contract_counts {
        let w = linear_shares(m);
        for (j, &steps) in t.steps.iter().enumerate() {
            let seed = t.seed ^ ((m as u64) << 32) ^ j as u64;
            for report in run_concentration_sweep(&w, steps, &t.epsilons, t.trials, seed)? {
                cells.push(ConcentrationCell {
                    weights: w.clone(),
                    report,
                });
            }
        }
    }
    let concentration = ConcentrationSummary {
        holds: cells.iter().all(|c| c.report.holds),
        cells,
    };

    let w = vec![1.0 / t.decay_contracts as f64; t.decay_contracts];
    let curve = coverage_decay_curve(&w, &t.decay_steps, t.decay_trials, t.seed)?;
    let decay = DecaySummary {
        sqrt_t_ratios: curve.sqrt_t_ratios(),
        holds: curve.within_envelope(t.decay_factor),
        factor: t.decay_factor,
        weights: w,
        curve,
    };
    Ok(TheoryOutcome {
        concentration,
        decay,
        risk: risk_bound_sweep(t.risk_trials, t.risk_max_contracts, t.risk_bound, t.seed, t.rhs_scale)?,
        graph: graph_bound_sweep(t.graph_trials, t.graph_max_contracts, t.seed, t.rhs_scale)?,
        refinement: refinement_beta_study(t.refinement_constructions, t.seed)?,
    })
}

// ablate

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub prio_cov_err: f64,
    pub acc_all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedArrow {
    pub seed: u64,
    pub m: usize,
    pub baseline: Endpoint,
    pub governed: Endpoint,
    /// Baseline minus governed PrioCovErr.
    pub prio_cov_err_reduction: f64,
    /// Governed minus baseline Acc_all.
    pub acc_all_change: f64,
    /// `|acc_all_change| / prio_cov_err_reduction`; absent if nothing was reduced.
    pub cost_per_point: Option<f64>,
    /// Lipschitz constant of the governed model's test contract losses.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub design: String,
    pub seeds: Vec<SeedArrow>,
    pub mean_baseline: Endpoint,
    pub mean_governed: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline_policy: String,
    pub governed_policy: String,
    pub refine_attribute: String,
    pub coarse: DesignReport,
    pub fine: DesignReport,
    /// Seeds where the fine design's cost per point is at most the coarse one's.
    pub fine_not_costlier: usize,
    pub seed_count: usize,
}

fn endpoint(m: &RunMetrics) -> Endpoint {
    Endpoint {
        prio_cov_err: m.prio_cov_err,
        acc_all: m.acc_all,
    }
}

fn mean_endpoint(points: impl Iterator<Item = Endpoint> + Clone) -> Endpoint {
    let n = points.clone().count() as f64;
    Endpoint {
        prio_cov_err: points.clone().map(|p| p.prio_cov_err).sum::<f64>() / n,
        acc_all: points.map(|p| p.acc_all).sum::<f64>() / n,
    }
}

/// Arrow for one seed and design from the baseline and governed runs.
pub fn seed_arrow(seed: u64, m: usize, baseline: &RunMetrics, governed: &RunMetrics, beta: Option<f64>) -> SeedArrow {
    let reduction = baseline.prio_cov_err - governed.prio_cov_err;
    let change = governed.acc_all - baseline.acc_all;
    SeedArrow {
        seed,
        m,
        baseline: endpoint(baseline),
        governed: endpoint(governed),
        prio_cov_err_reduction: reduction,
        acc_all_change: change,
        cost_per_point: (reduction > 0.0).then(|| change.abs() / reduction),
        beta,
    }
}

fn design_report(design: &str, seeds: Vec<SeedArrow>) -> DesignReport {
    DesignReport {
        design: design.to_string(),
        mean_baseline: mean_endpoint(seeds.iter().map(|s| s.baseline)),
        mean_governed: mean_endpoint(seeds.iter().map(|s| s.governed)),
        seeds,
    }
}

/// Trains the baseline and governed policies under the coarse contracts and
/// their refinement by `contracts.refine_attribute`.
pub fn ablate(cfg: &RunConfig) -> CliResult<AblationReport> {
    let attr = cfg
        .contracts
        .refine_attribute
        .clone()
        .ok_or_else(|| CliError::Config("ablate needs contracts.refine_attribute".into()))?;
    let data = cfg.load_dataset()?;
    if let Some(s) = data.samples.iter().find(|s| !s.attrs.contains_key(&attr)) {
        return Err(CliError::Config(format!("sample {} has no refinement attribute `{attr}`", s.id)));
    }
    let prepared: Vec<(Prepared, ContractSet)> = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let p = prepare(cfg, &data, s)?;
            let fine = p.set.refine_contracts(&p.train.samples, &attr)?;
            Ok((p, fine))
        })
        .collect::<CliResult<_>>()?;

    let policies = [
        cfg.policies.resolve(cfg.ablation.baseline),
        cfg.policies.resolve(cfg.ablation.governed),
    ];
    let mut tasks = Vec::new();
    for (i, _) in prepared.iter().enumerate() {
        for design in 0..2 {
            for pol in policies {
                tasks.push((i, design, pol));
            }
        }
    }
    let outcomes: Vec<TrainOutcome<f64>> = tasks
        .par_iter()
        .map(|&(i, design, pol)| {
            let (p, fine) = &prepared[i];
            run_one(cfg, p, if design == 0 { &p.set } else { fine }, pol)
        })
        .collect::<CliResult<_>>()?;

    let dir = cfg.out_dir.join("ablation");
    let names = ["coarse", "fine"];
    let mut outputs = Vec::new();
    let mut arrows: [Vec<SeedArrow>; 2] = [Vec::new(), Vec::new()];
    for (chunk, (i, design, _)) in outcomes.chunks(2).zip(tasks.iter().step_by(2)) {
        let (p, fine) = &prepared[*i];
        let set = if *design == 0 { &p.set } else { fine };
        for o in chunk {
            let path = dir
                .join("runs")
                .join(format!("{}_{}.json", names[*design], run_stem(&o.metrics.policy, p.seed)));
            write_json(&path, &o.metrics)?;
            outputs.push(path);
        }
        let graph = build_graph(set, &cfg.contracts.adjacency_rule(set))?;
        let losses: Vec<Option<f64>> = chunk[1].metrics.per_contract.iter().map(|r| r.loss).collect();
        let beta = lipschitz_beta_observed(&graph, &losses)?;
        arrows[*design].push(seed_arrow(p.seed, set.len(), &chunk[0].metrics, &chunk[1].metrics, beta));
    }
    let [coarse, fine] = arrows;
    let fine_not_costlier = coarse
        .iter()
        .zip(&fine)
        .filter(|(c, f)| match (c.cost_per_point, f.cost_per_point) {
            (Some(c), Some(f)) => f <= c,
            (None, Some(_)) => true,
            _ => false,
        })
        .count();
    let report = AblationReport {
        baseline_policy: policies[0].kind.name().to_string(),
        governed_policy: policies[1].kind.name().to_string(),
        refine_attribute: attr,
        seed_count: cfg.seeds.len(),
        coarse: design_report("coarse", coarse),
        fine: design_report("fine", fine),
        fine_not_costlier,
    };
    let json = dir.join("ablation.json");
    write_json(&json, &report)?;
    let csv_path = dir.join("arrows.csv");
    write_arrows(&report, create(&csv_path)?)?;
    outputs.extend([json, csv_path]);
    write_manifest(cfg, "ablate", &outputs)?;
    Ok(report)
}

/// Long-format arrows: one row per `(design, seed, end)`, plus seed `mean` rows.
pub fn write_arrows<W: Write>(report: &AblationReport, writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["design", "seed", "end", "policy", "prio_cov_err", "acc_all"])?;
    for d in [&report.coarse, &report.fine] {
        let mut row = |seed: String, end: &str, policy: &str, e: Endpoint| {
            w.write_record([
                d.design.clone(),
                seed,
                end.to_string(),
                policy.to_string(),
                e.prio_cov_err.to_string(),
                e.acc_all.to_string(),
            ])
        };
        for s in &d.seeds {
            row(s.seed.to_string(), "start", &report.baseline_policy, s.baseline)?;
            row(s.seed.to_string(), "end", &report.governed_policy, s.governed)?;
        }
        row("mean".into(), "start", &report.baseline_policy, d.mean_baseline)?;
        row("mean".into(), "end", &report.governed_policy, d.mean_governed)?;
    }
    w.flush()?;
    Ok(())
}
