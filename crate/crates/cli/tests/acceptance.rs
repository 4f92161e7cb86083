//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line and
//! the process exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use common::{code, files, osag};
use osag_cli::commands::{self, prepare, run_one};
use osag_cli::config::{Overrides, RunConfig};
use osag_cli::error::EXIT_OK;
use osag_core::data::Sample;
use osag_core::registry::{ContractSet, PriorityLevels};
use osag_core::rng::SeededStream;
use osag_core::sampling::{class_balanced_distribution, DiscreteDistribution, MixedSampler, PolicyKind};
use osag_core::trainer::{gradient_check, Mlp};
use tempfile::TempDir;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str, out: &Path) -> RunConfig {
    RunConfig::load(&config_path(name))
        .unwrap()
        .apply(&Overrides {
            out_dir: Some(out.to_path_buf()),
            ..Default::default()
        })
        .unwrap()
}

struct Verdicts(Vec<(usize, bool)>);

impl Verdicts {
    fn record(&mut self, n: usize, pass: bool, what: &str, detail: String) {
        println!("criterion {n:>2}: {} {what} ({detail})", if pass { "PASS" } else { "FAIL" });
        self.0.push((n, pass));
    }
}

fn theory(v: &mut Verdicts, out: &Path) {
    // The shipped defaults are the acceptance grid.
    let cfg = RunConfig {
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    let o = commands::theory_outcome(&cfg).unwrap();
    let c = &o.concentration;
    let worst = c
        .cells
        .iter()
        .map(|cell| {
            let r = &cell.report;
            r.per_contract_violation_rate
                .iter()
                .zip(&r.per_contract_standard_error)
                .map(|(rate, se)| rate - (r.hoeffding_bound + 3.0 * se))
                .fold(r.union_event_rate - (r.union_bound + 3.0 * r.union_standard_error), f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    v.record(
        1,
        c.holds && c.cells.len() == 18 && c.cells.iter().all(|cell| cell.report.trials == 2000),
        "coverage concentration never falsified",
        format!("{} cells, worst rate minus allowance {worst:.4}", c.cells.len()),
    );
    let d = &o.decay;
    v.record(
        2,
        d.holds && d.curve.trials == 1000 && d.weights.len() == 4,
        "coverage error decays as 1/sqrt(T)",
        format!("E·sqrt(T) ratios to T=1e4 {:?}", d.sqrt_t_ratios),
    );
    let r = &o.risk;
    v.record(
        3,
        r.holds && r.violations == 0 && r.trials == 100_000 && r.max_m == 32,
        "service risk bound never falsified",
        format!("{} trials, max lhs/rhs {:.4}", r.trials, r.max_ratio),
    );
    let g = &o.graph;
    v.record(
        4,
        g.holds && g.trials == 10_000 && g.max_m == 12,
        "graph Lipschitz bounds never falsified",
        format!(
            "{} graphs, violations {}/{}",
            g.trials, g.max_loss_violations, g.risk_violations
        ),
    );
}

fn table_shape(v: &mut Verdicts, out: &Path) {
    let mut cfg = load("default.toml", out);
    cfg.policies.names = vec![PolicyKind::Rand, PolicyKind::OsagMix];
    let summary = commands::train(&cfg).unwrap();
    let rand = summary.row("rand").unwrap();
    let mix = summary.row("osag-mix").unwrap();
    let ratio = mix.prio_cov_err.mean / rand.prio_cov_err.mean;
    let (hr, hm) = (rand.acc_high.unwrap().mean, mix.acc_high.unwrap().mean);
    let pass = mix.alpha == 0.5 && ratio <= 0.6 && hm >= hr && mix.acc_all.mean >= rand.acc_all.mean - 2.0;
    v.record(
        5,
        pass,
        "governed mixture halves coverage error at little accuracy cost",
        format!(
            "PrioCovErr {:.2} -> {:.2} (ratio {ratio:.3}), Acc_high {hr:.2} -> {hm:.2}, Acc_all {:.2} -> {:.2}",
            rand.prio_cov_err.mean, mix.prio_cov_err.mean, rand.acc_all.mean, mix.acc_all.mean
        ),
    );
}

fn tracking(v: &mut Verdicts, out: &Path) {
    let mut cfg = load("default.toml", out);
    cfg.train.steps = 10_000;
    cfg.train.batch_size = 1;
    let policy = cfg.policies.resolve(PolicyKind::Osag);
    let data = cfg.load_dataset().unwrap();
    let mut errs = Vec::new();
    let mut m = 0;
    for &seed in &cfg.seeds {
        let p = prepare(&cfg, &data, seed).unwrap();
        m = m.max(p.set.len());
        errs.push(run_one(&cfg, &p, &p.set, policy).unwrap().metrics.prio_cov_err);
    }
    v.record(
        6,
        m <= 20 && errs.iter().all(|&e| e <= 5.0),
        "pure governed sampling tracks target shares",
        format!("m = {m}, final PrioCovErr per seed {errs:.3?}"),
    );
}

fn gradients(v: &mut Verdicts) {
    let mut s = SeededStream::new(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let model = Mlp::<f64>::new(3, 4, 2, &mut s).unwrap();
        let n = 1 + s.next_index(8);
        let x: Vec<f64> = (0..3 * n).map(|_| 4.0 * s.next_unit() - 2.0).collect();
        let y: Vec<usize> = (0..n).map(|_| s.next_index(2)).collect();
        let w = vec![1.0 / n as f64; n];
        worst = worst.max(gradient_check(&model, &x, &y, &w, 1e-5, 1e-4).unwrap());
    }
    v.record(7, worst < 1e-4, "analytic gradients match finite differences", format!("max relative error {worst:.2e}"));
}

fn random_set(s: &mut SeededStream) -> (Vec<Sample>, ContractSet) {
    let n = 10 + s.next_index(31);
    let regions = 1 + s.next_index(4);
    let classes = 2 + s.next_index(3);
    let samples: Vec<Sample> = (0..n)
        .map(|id| {
            let u = s.next_unit();
            Sample {
                id,
                features: vec![0.0],
                label: ((u * u) * classes as f64) as usize,
                attrs: BTreeMap::from([("region".to_string(), format!("r{}", s.next_index(regions)))]),
            }
        })
        .collect();
    let levels = PriorityLevels {
        base: 1,
        rare: 1 + s.next_index(5) as u32,
    };
    let set = ContractSet::build(&samples, &["region"], 0.3, levels).unwrap();
    (samples, set)
}

fn sampler_marginals(v: &mut Verdicts) {
    const DRAWS: u64 = 1_000_000;
    let mut s = SeededStream::new(8);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for set_index in 0..20 {
        let (samples, set) = random_set(&mut s);
        let baseline = if set_index % 2 == 0 {
            DiscreteDistribution::uniform(samples.len()).unwrap()
        } else {
            class_balanced_distribution(&samples).unwrap()
        };
        for (k, alpha) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            let mix = MixedSampler::new(&set, baseline.clone(), (0..samples.len()).collect(), alpha).unwrap();
            let mut stream = SeededStream::new(1000 * set_index + k as u64);
            let mut counts = vec![0u64; samples.len()];
            for _ in 0..DRAWS {
                counts[mix.mixed_step(&mut stream).sample_id] += 1;
            }
            for (&c, p) in counts.iter().zip(mix.marginal()) {
                let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
                let f = c as f64 / DRAWS as f64;
                let z = if se == 0.0 {
                    if f == p { 0.0 } else { f64::INFINITY }
                } else {
                    (f - p).abs() / se
                };
                worst = worst.max(z);
                checked += 1;
            }
        }
    }
    v.record(
        8,
        worst <= 4.0,
        "mixture sampler marginals match their closed form",
        format!("{checked} per-sample frequencies, max |z| {worst:.2}"),
    );
}

fn ablation(v: &mut Verdicts, out: &Path) {
    let cfg = load("ablation.toml", out);
    let r = commands::ablate(&cfg).unwrap();
    let arrows = fs::read_to_string(out.join("ablation/arrows.csv")).unwrap();
    let emitted = r.coarse.seeds.len() == 3 && r.fine.seeds.len() == 3 && arrows.lines().count() == 1 + 16;
    let costs = |d: &commands::DesignReport| d.seeds.iter().map(|s| s.cost_per_point).collect::<Vec<_>>();
    v.record(
        9,
        emitted && r.fine_not_costlier >= 2,
        "fine contracts are no costlier per point of coverage gained",
        format!(
            "fine not costlier in {}/{} seeds; cost coarse {:.3?} fine {:.3?}",
            r.fine_not_costlier,
            r.seed_count,
            costs(&r.coarse),
            costs(&r.fine)
        ),
    );
}

fn determinism(v: &mut Verdicts, dir: &Path) {
    // The default configuration with a shorter schedule and smaller theory grid.
    let body = fs::read_to_string(config_path("default.toml")).unwrap().replace("steps = 2000", "steps = 300");
    let body = format!(
        "{body}\n[theory]\ntrials = 200\ndecay_trials = 200\nrisk_trials = 2000\ngraph_trials = 500\nrefinement_constructions = 50\n"
    );
    let cfg = dir.join("determinism.toml");
    fs::write(&cfg, body).unwrap();
    let roots = [dir.join("first"), dir.join("second")];
    for root in &roots {
        for command in ["gen-data", "train", "verify-theory", "ablate", "report"] {
            let o = osag(command, &cfg, &["--out", root.to_str().unwrap()]);
            assert_eq!(code(&o), EXIT_OK, "{command}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let listed = files(&roots[0]);
    let mut differing = Vec::new();
    let mut compared = 0;
    for rel in listed.iter().filter(|p| !p.to_str().unwrap().starts_with("manifest_")) {
        compared += 1;
        if fs::read(roots[0].join(rel)).ok() != fs::read(roots[1].join(rel)).ok() {
            differing.push(rel.display().to_string());
        }
    }
    v.record(
        10,
        listed == files(&roots[1]) && differing.is_empty(),
        "every command reproduces its outputs byte for byte",
        format!("{compared} files compared, {} differ {differing:?}", differing.len()),
    );
}

fn main() {
    let dir = TempDir::new().unwrap();
    let mut v = Verdicts(Vec::new());
    theory(&mut v, &dir.path().join("theory"));
    table_shape(&mut v, &dir.path().join("table"));
    tracking(&mut v, &dir.path().join("tracking"));
    gradients(&mut v);
    sampler_marginals(&mut v);
    ablation(&mut v, &dir.path().join("ablation"));
    determinism(&mut v, dir.path());
    let failed: Vec<usize> = v.0.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all {} criteria pass", v.0.len());
}
