#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_osag"))
}

/// Runs `osag <command> --config <config> <extra...>`.
pub fn osag(command: &str, config: &Path, extra: &[&str]) -> Output {
    binary()
        .arg(command)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> u8 {
    out.status.code().expect("exited normally") as u8
}

/// Writes `body` to `dir/name` with `out_dir` pointing at `dir/out`.
pub fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let out = dir.join("out");
    fs::write(&path, format!("out_dir = {:?}\n{body}", out.to_str().unwrap())).unwrap();
    path
}

/// Small but complete configuration that runs in well under a second.
pub const SMALL: &str = r#"
seeds = [0, 1, 2]

[data.synthetic]
regions = 2
classes = 3
base_count = 40
dim = 4
subgroup_heterogeneity = 1.0

[train]
steps = 120
batch_size = 8
hidden = 8

[policies]
names = ["rand", "cb", "osag-mix"]

[theory]
trials = 60
steps = [100, 1000]
decay_trials = 60
risk_trials = 200
graph_trials = 200
refinement_constructions = 20
"#;

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every regular file under `root`, relative and sorted.
pub fn files(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, acc: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, acc);
            } else {
                acc.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut acc = Vec::new();
    walk(root, root, &mut acc);
    acc.sort();
    acc
}

pub fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs/schemas")
        .join(format!("{name}.schema.json"));
    read_json(&path)
}

/// Validates against the keyword subset the shipped schemas use: `type`,
/// `properties`, `required`, `additionalProperties: false`, `items`, `enum`,
/// `minimum` and `maximum`. Returns the first violation found.
pub fn validate(schema: &Value, value: &Value) -> Result<(), String> {
    check(schema, value, "$")
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        other => panic!("unsupported type keyword {other}"),
    }
}

fn check(schema: &Value, v: &Value, at: &str) -> Result<(), String> {
    let s = schema.as_object().expect("schema is an object");
    for key in s.keys() {
        let known = [
            "$schema",
            "title",
            "type",
            "properties",
            "required",
            "additionalProperties",
            "items",
            "enum",
            "minimum",
            "maximum",
        ];
        assert!(known.contains(&key.as_str()), "unsupported schema keyword {key}");
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            return Err(format!("{at}: expected {t}, found {v}"));
        }
    }
    if let Some(options) = s.get("enum").and_then(Value::as_array) {
        if !options.contains(v) {
            return Err(format!("{at}: {v} not in {options:?}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if s.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
            return Err(format!("{at}: {x} below minimum"));
        }
        if s.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
            return Err(format!("{at}: {x} above maximum"));
        }
    }
    if let Some(obj) = v.as_object() {
        let props = s.get("properties").and_then(Value::as_object);
        for r in s.get("required").and_then(Value::as_array).into_iter().flatten() {
            let r = r.as_str().unwrap();
            if !obj.contains_key(r) {
                return Err(format!("{at}: missing `{r}`"));
            }
        }
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => check(sub, child, &format!("{at}.{k}"))?,
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{at}: unexpected `{k}`"))
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (s.get("items"), v.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            check(items, child, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}

/// Schema name for an emitted JSON file, by location.
pub fn schema_for(rel: &Path) -> &'static str {
    let name = rel.file_name().unwrap().to_str().unwrap();
    let parent = rel.parent().and_then(|p| p.file_name()).and_then(|p| p.to_str()).unwrap_or("");
    match (parent, name) {
        (_, n) if n.starts_with("manifest_") => "manifest",
        (_, n) if n.starts_with("contracts_seed") => "contract_set",
        ("runs", _) => "run_metrics",
        (_, "summary.json") => "summary",
        (_, "ablation.json") => "ablation",
        ("theory", "concentration.json") => "concentration",
        ("theory", "decay.json") => "decay",
        ("theory", "risk_bound.json") => "risk_bound",
        ("theory", "graph_bound.json") => "graph_bound",
        ("theory", "refinement.json") => "refinement",
        _ => panic!("no schema for {}", rel.display()),
    }
}
