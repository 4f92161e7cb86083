//! Datasets: synthetic generation, CSV ingestion and the stratified split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededStream;

/// One labeled feature vector plus the attributes contracts are keyed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
    pub attrs: BTreeMap<String, String>,
}

impl Sample {
    pub fn attr(&self, name: &str) -> Result<&str> {
        self.attrs
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Keying {
                sample_id: self.id,
                attribute: name.to_string(),
            })
    }
}

/// A validated collection of samples with a dense label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dim: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Checks dimensions, finiteness, label range and id uniqueness.
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Input("dataset has no samples".into()))?;
        let dim = first.features.len();
        if dim == 0 {
            return Err(Error::Data("feature dimension is zero".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::Data(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if let Some(x) = s.features.iter().find(|x| !x.is_finite()) {
                return Err(Error::Data(format!("sample {} has non-finite feature {x}", s.id)));
            }
            if s.label >= class_names.len() {
                return Err(Error::Data(format!(
                    "sample {} has label {} but only {} classes",
                    s.id,
                    s.label,
                    class_names.len()
                )));
            }
            if !ids.insert(s.id) {
                return Err(Error::Data(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            samples,
            dim,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    fn attribute_names(&self) -> Vec<String> {
        let names: BTreeSet<&String> = self.samples.iter().flat_map(|s| s.attrs.keys()).collect();
        names.into_iter().cloned().collect()
    }

    /// Writes `id,f0..f{d-1},label,<attributes>`; the label column carries the class name.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let attrs = self.attribute_names();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        header.push("label".into());
        header.extend(attrs.iter().cloned());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = Vec::with_capacity(header.len());
            row.push(s.id.to_string());
            row.extend(s.features.iter().map(|x| x.to_string()));
            row.push(self.class_names[s.label].clone());
            row.extend(attrs.iter().map(|a| s.attrs.get(a).cloned().unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Schema matching [`Dataset::write_csv`] output for this dataset.
    pub fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            id_column: Some("id".into()),
            feature_columns: (0..self.dim).map(|j| format!("f{j}")).collect(),
            label_column: "label".into(),
            attribute_columns: self.attribute_names(),
            grid: None,
        }
    }
}

/// Parameters of the synthetic contract-structured dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dataset_name: String,
    pub regions: usize,
    pub classes: usize,
    /// Fraction of classes (rounded up) that are down-scaled.
    pub rare_fraction: f64,
    /// Samples per (region, class) cell for common classes.
    pub base_count: usize,
    /// Down-scaling factor for rare-class cells, in (0, 1).
    pub rare_scale: f64,
    /// Sub-groups per cell, assigned round-robin; used for contract refinement.
    pub subgroups: usize,
    /// Sub-group `g` gets noise `noise * (1 + heterogeneity * g / (subgroups - 1))`.
    pub subgroup_heterogeneity: f64,
    pub dim: usize,
    /// Lattice spacing between neighbouring (region, class) centers.
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dataset_name: "synth".into(),
            regions: 4,
            classes: 5,
            rare_fraction: 0.2,
            base_count: 150,
            rare_scale: 0.2,
            subgroups: 2,
            subgroup_heterogeneity: 0.0,
            dim: 8,
            separation: 2.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.classes < 2 {
            return bad("synthetic data needs at least 2 classes");
        }
        if self.regions < 1 {
            return bad("synthetic data needs at least 1 region");
        }
        if self.dim < 2 {
            return bad("synthetic feature dimension must be at least 2");
        }
        if self.subgroups < 1 {
            return bad("subgroups must be at least 1");
        }
        if self.base_count == 0 {
            return bad("base_count must be positive");
        }
        if !(0.0..1.0).contains(&self.rare_fraction) {
            return bad("rare_fraction must lie in [0, 1)");
        }
        if !(self.rare_scale > 0.0 && self.rare_scale < 1.0) {
            return bad("rare_scale must lie in (0, 1)");
        }
        if self.num_rare_classes() > 0 && self.rare_count() == 0 {
            return bad("rare cells would be empty; raise base_count or rare_scale");
        }
        if !(self.separation.is_finite() && self.separation >= 0.0)
            || !(self.noise.is_finite() && self.noise >= 0.0)
            || !(self.subgroup_heterogeneity.is_finite() && self.subgroup_heterogeneity >= 0.0)
        {
            return bad("separation, noise and heterogeneity must be finite and non-negative");
        }
        Ok(())
    }

    pub fn num_rare_classes(&self) -> usize {
        ceil_fraction(self.rare_fraction, self.classes)
    }

    /// Rare classes are the highest-indexed ones.
    pub fn is_rare_class(&self, class: usize) -> bool {
        class >= self.classes - self.num_rare_classes()
    }

    pub fn rare_count(&self) -> usize {
        (self.base_count as f64 * self.rare_scale).round() as usize
    }

    pub fn cell_count(&self, class: usize) -> usize {
        if self.is_rare_class(class) {
            self.rare_count()
        } else {
            self.base_count
        }
    }

    pub fn total_count(&self) -> usize {
        self.regions * (0..self.classes).map(|k| self.cell_count(k)).sum::<usize>()
    }

    /// Center of cell `(region, class)` on an integer lattice scaled by `separation`.
    fn center(&self, region: usize, class: usize) -> Vec<f64> {
        let cells = self.regions * self.classes;
        let mut side = 2usize;
        while side.checked_pow(self.dim as u32).is_some_and(|c| c < cells) {
            side += 1;
        }
        let mut j = region * self.classes + class;
        let mut c = vec![0.0; self.dim];
        for x in c.iter_mut() {
            *x = (j % side) as f64 * self.separation;
            j /= side;
        }
        c
    }
}

/// `⌈fraction · n⌉`, tolerant of representation error in `fraction · n`.
pub(crate) fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    ((x - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Draws the synthetic dataset described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededStream::new(spec.seed);
    let class_names: Vec<String> = (0..spec.classes).map(|k| format!("c{k}")).collect();
    let mut samples = Vec::with_capacity(spec.total_count());
    for region in 0..spec.regions {
        for (class, class_name) in class_names.iter().enumerate() {
            let center = spec.center(region, class);
            for i in 0..spec.cell_count(class) {
                let g = i % spec.subgroups;
                let spread = if spec.subgroups > 1 {
                    g as f64 / (spec.subgroups - 1) as f64
                } else {
                    0.0
                };
                let sigma = spec.noise * (1.0 + spec.subgroup_heterogeneity * spread);
                let features = center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + sigma * z
                    })
                    .collect();
                let attrs = BTreeMap::from([
                    ("dataset".to_string(), spec.dataset_name.clone()),
                    ("region".to_string(), format!("r{region}")),
                    ("class".to_string(), class_name.clone()),
                    ("subgroup".to_string(), format!("g{g}")),
                ]);
                samples.push(Sample {
                    id: samples.len(),
                    features,
                    label: class,
                    attrs,
                });
            }
        }
    }
    Dataset::new(samples, class_names)
}

/// Bins two numeric columns into a `cells × cells` grid attribute `"<bx>_<by>"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBinning {
    pub x_column: String,
    pub y_column: String,
    #[serde(default = "default_grid_cells")]
    pub cells: usize,
    #[serde(default = "default_grid_attribute")]
    pub attribute: String,
}

fn default_grid_cells() -> usize {
    4
}

fn default_grid_attribute() -> String {
    "grid".into()
}

/// Column layout of an ingested feature CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Without an id column the 0-based data row index is the id.
    #[serde(default)]
    pub id_column: Option<String>,
    pub feature_columns: Vec<String>,
    pub label_column: String,
    #[serde(default)]
    pub attribute_columns: Vec<String>,
    #[serde(default)]
    pub grid: Option<GridBinning>,
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Parses a headed, comma-separated feature file. Row numbers in errors are
/// 1-based file lines (the header is line 1).
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Ingest {
            row: 1,
            message: "missing header row".into(),
        });
    }
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index.get(name).copied().ok_or_else(|| Error::Ingest {
            row: 1,
            message: format!("missing column `{name}`"),
        })
    };
    if schema.feature_columns.is_empty() {
        return Err(Error::Config("schema declares no feature columns".into()));
    }
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = col(&schema.label_column)?;
    let attr_idx = schema
        .attribute_columns
        .iter()
        .map(|c| Ok((c.clone(), col(c)?)))
        .collect::<Result<Vec<_>>>()?;
    let id_idx = schema.id_column.as_deref().map(col).transpose()?;
    let grid_idx = schema
        .grid
        .as_ref()
        .map(|g| Ok::<_, Error>((col(&g.x_column)?, col(&g.y_column)?)))
        .transpose()?;

    let parse = |row: usize, field: &str, what: &str| -> Result<f64> {
        let x: f64 = field.trim().parse().map_err(|_| Error::Ingest {
            row,
            message: format!("cannot parse {what} `{field}` as a number"),
        })?;
        if !x.is_finite() {
            return Err(Error::Ingest {
                row,
                message: format!("non-finite {what} `{field}`"),
            });
        }
        Ok(x)
    };

    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut samples = Vec::new();
    let mut grid_points = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Ingest {
            row,
            message: e.to_string(),
        })?;
        let field = |j: usize| -> Result<&str> {
            record.get(j).ok_or_else(|| Error::Ingest {
                row,
                message: format!("row has {} fields, column {j} missing", record.len()),
            })
        };
        let features = feature_idx
            .iter()
            .zip(&schema.feature_columns)
            .map(|(&j, name)| parse(row, field(j)?, name))
            .collect::<Result<Vec<_>>>()?;
        let label_name = field(label_idx)?.trim().to_string();
        let next = class_names.len();
        let label = *class_index.entry(label_name.clone()).or_insert_with(|| {
            class_names.push(label_name);
            next
        });
        let mut attrs = BTreeMap::new();
        for (name, j) in &attr_idx {
            attrs.insert(name.clone(), field(*j)?.to_string());
        }
        let id = match id_idx {
            Some(j) => field(j)?.trim().parse().map_err(|_| Error::Ingest {
                row,
                message: format!("cannot parse id `{}`", field(j).unwrap_or("")),
            })?,
            None => i,
        };
        if let Some((xj, yj)) = grid_idx {
            grid_points.push((parse(row, field(xj)?, "grid x")?, parse(row, field(yj)?, "grid y")?));
        }
        samples.push(Sample {
            id,
            features,
            label,
            attrs,
        });
    }
    if samples.is_empty() {
        return Err(Error::Ingest {
            row: 2,
            message: "file has no data rows".into(),
        });
    }
    if let Some(grid) = &schema.grid {
        if grid.cells == 0 {
            return Err(Error::Config("grid cells must be positive".into()));
        }
        let bin = |vals: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = vals.collect();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.into_iter()
                .map(|x| {
                    if hi > lo {
                        (((x - lo) / (hi - lo) * grid.cells as f64) as usize).min(grid.cells - 1)
                    } else {
                        0
                    }
                })
                .collect::<Vec<_>>()
        };
        let bx = bin(&mut grid_points.iter().map(|p| p.0));
        let by = bin(&mut grid_points.iter().map(|p| p.1));
        for ((s, x), y) in samples.iter_mut().zip(bx).zip(by) {
            s.attrs.insert(grid.attribute.clone(), format!("{x}_{y}"));
        }
    }
    Dataset::new(samples, class_names).map_err(|e| match e {
        Error::Data(m) => Error::Ingest { row: 0, message: m },
        other => other,
    })
}

/// Per-class seeded split; each class with at least two samples lands in both parts.
pub fn stratified_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    let mut rng = SeededStream::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, s) in data.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut is_test = vec![false; data.len()];
    for members in &mut by_class {
        let n = members.len();
        if n < 2 {
            continue;
        }
        members.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in data.samples.iter().zip(is_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((
        Dataset::new(train, data.class_names.clone())?,
        Dataset::new(test, data.class_names.clone())?,
    ))
}
