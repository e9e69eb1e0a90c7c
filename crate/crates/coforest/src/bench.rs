//! Desk-scale experiment driver.
//!
//! An experiment spec is a TOML file:
//!
//! ```toml
//! seeds = [1, 2, 3]
//! variants = ["nash", "equal", "single-tree", "nash-same-input"]
//! metrics = ["adversarial_accuracy", "max_regret"]
//!
//! [budget]            # any run-config keys, applied over the desk budget
//! generation_limit = 80
//!
//! [[datasets]]
//! path = "bundled:diagonal"
//! epsilon = 0.05
//!
//! [[datasets]]
//! path = "data/blobs.csv"
//! label = "class"
//! epsilon = 0.1
//! ```
//!
//! Variants are a composition (`nash`, `equal`, `single-tree`) optionally
//! followed by `-same-input` and/or `-no-migration`. Within one
//! (dataset, seed, metric) cell all variants share the data split and the
//! per-island seeds; variants differing only in composition share one
//! archipelago run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use coforest_core::archipelago::ArchipelagoResult;
use coforest_core::ensemble::CompositionMethod;
use coforest_core::metrics::ensemble_diversity;
use coforest_core::rng::derive_seed;
use coforest_core::{DecisionTree, Forest, MetricKind};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::csv_io::LabelColumn;
use crate::datasets;
use crate::error::{AppError, Result};
use crate::pipeline::{compose, evaluate, prepare, run_archipelago, sole_tree, EvalSettings, Forests, Prepared};
use crate::report::{mean_std, write_rows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub path: String,
    pub label: Option<String>,
    /// Required for CSV paths; bundled datasets have a preset.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub datasets: Vec<DatasetEntry>,
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub budget: toml::Table,
}

fn default_variants() -> Vec<String> {
    ["nash", "equal", "single-tree"].map(String::from).to_vec()
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::AdversarialAccuracy]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub composition: CompositionMethod,
    pub same_input: bool,
    pub migration: bool,
}

impl FromStr for Variant {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        let mut rest = s;
        let mut same_input = false;
        let mut migration = true;
        loop {
            if let Some(r) = rest.strip_suffix("-same-input") {
                same_input = true;
                rest = r;
            } else if let Some(r) = rest.strip_suffix("-no-migration") {
                migration = false;
                rest = r;
            } else {
                break;
            }
        }
        let composition = match rest {
            "nash" => CompositionMethod::Nash,
            "equal" => CompositionMethod::Equal,
            "single-tree" => CompositionMethod::Single,
            _ => return Err(AppError::Config(format!("unknown variant `{s}`"))),
        };
        Ok(Self { composition, same_input, migration })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.composition {
            CompositionMethod::Single => "single-tree",
            c => c.as_str(),
        };
        write!(f, "{base}")?;
        if self.same_input {
            f.write_str("-same-input")?;
        }
        if !self.migration {
            f.write_str("-no-migration")?;
        }
        Ok(())
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&crate::error::read_to_string(path)?)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.seeds.is_empty() || self.metrics.is_empty() {
            return Err(AppError::Config("datasets, seeds and metrics must be nonempty".into()));
        }
        for d in &self.datasets {
            self.epsilon_for(d)?;
        }
        self.parsed_variants()?;
        self.base_config()?;
        Ok(())
    }

    pub fn parsed_variants(&self) -> Result<Vec<Variant>> {
        self.variants.iter().map(|v| v.parse()).collect()
    }

    pub fn epsilon_for(&self, d: &DatasetEntry) -> Result<f64> {
        let preset = d.path.strip_prefix(datasets::PREFIX).and_then(datasets::bundled).map(|b| b.epsilon);
        d.epsilon
            .or(preset)
            .ok_or_else(|| AppError::Config(format!("dataset `{}` has no epsilon", d.path)))
    }

    /// The desk budget with this experiment's budget overrides.
    pub fn base_config(&self) -> Result<RunConfig> {
        RunConfig::desk().merged(self.budget.clone())
    }
}

/// One (dataset, variant, metric, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub dataset: String,
    pub variant: String,
    pub metric: String,
    pub seed: u64,
    /// The cell's metric on the test split.
    pub value: Option<f64>,
    pub clean_accuracy: Option<f64>,
    pub avg_diversity: Option<f64>,
    pub max_diversity: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub variant: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub rows: Vec<CellRow>,
    pub summary: Vec<CellSummary>,
}

/// An archipelago run shared by the variants of one cell, with its
/// composed forests and champion diversity.
type CellRun = (ArchipelagoResult, Forests, Option<(f64, f64)>);

fn metric_value(metric: MetricKind, e: &crate::pipeline::Evaluation) -> f64 {
    match metric {
        MetricKind::AdversarialAccuracy => e.adversarial_accuracy_exact.unwrap_or(e.adversarial_accuracy),
        MetricKind::MaxRegret => e.max_regret,
    }
}

fn forest_of(forests: &Forests, composition: CompositionMethod) -> &Forest {
    match composition {
        CompositionMethod::Nash => &forests.nash.forest,
        CompositionMethod::Equal => &forests.equal,
        CompositionMethod::Single => &forests.single,
    }
}

fn cell_config(base: &RunConfig, epsilon: f64, seed: u64, metric: MetricKind, v: &Variant) -> RunConfig {
    RunConfig {
        epsilon,
        seed,
        metric,
        same_input: v.same_input,
        migration_size: if v.migration { base.migration_size } else { 0 },
        ..base.clone()
    }
}

/// External diversity of the island champions on the configured
/// evaluation set.
fn external_diversity(result: &ArchipelagoResult, prepared: &Prepared, per_island: usize) -> Result<Option<(f64, f64)>> {
    let set = coforest_core::ensemble::diversity_evaluation_set(result, &prepared.test.dataset.instances, per_island)?;
    let champions: Vec<&DecisionTree> = result.best_tree_per_island.iter().map(|t| &t.0).collect();
    Ok(if champions.len() >= 2 { Some(ensemble_diversity(&champions, &set)?) } else { None })
}

/// Trains and evaluates every cell. A failing cell is recorded with its
/// error and the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    let base = spec.base_config()?;
    let variants = spec.parsed_variants()?;
    let mut rows = Vec::new();
    for entry in &spec.datasets {
        let epsilon = spec.epsilon_for(entry)?;
        let label = entry.label.as_deref().map(|l| l.parse::<LabelColumn>().expect("infallible"));
        let data = datasets::load(&entry.path, label.as_ref(), None);
        for &seed in &spec.seeds {
            let prepared = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                prepare(d, base.test_fraction, seed).map_err(|e| e.to_string())
            });
            for &metric in &spec.metrics {
                // one archipelago run per distinct (same_input, migration)
                let mut runs: Vec<((bool, bool), std::result::Result<CellRun, String>)> = Vec::new();
                for v in &variants {
                    let key = (v.same_input, v.migration);
                    let outcome = match runs.iter().position(|r| r.0 == key) {
                        Some(i) => &runs[i].1,
                        None => {
                            let cfg = cell_config(&base, epsilon, seed, metric, v);
                            let run = prepared.clone().and_then(|p| {
                                let go = || -> Result<_> {
                                    let result = run_archipelago(&cfg.archipelago()?, &p.train.dataset, &[], cfg.threads)?;
                                    let forests = compose(&result)?;
                                    let div = external_diversity(&result, &p, cfg.diversity_perturbations)?;
                                    Ok((result, forests, div))
                                };
                                go().map_err(|e| e.to_string())
                            });
                            runs.push((key, run));
                            &runs.last().expect("just pushed").1
                        }
                    };
                    let dataset_name = data.as_ref().map_or_else(|_| entry.path.clone(), |d| d.dataset.name.clone());
                    let mut row = CellRow {
                        dataset: dataset_name,
                        variant: v.to_string(),
                        metric: metric.as_str().into(),
                        seed,
                        value: None,
                        clean_accuracy: None,
                        avg_diversity: None,
                        max_diversity: None,
                        status: "ok".into(),
                    };
                    let evaluated = outcome.as_ref().map_err(Clone::clone).and_then(|(_, forests, div)| {
                        let p = prepared.as_ref().map_err(Clone::clone)?;
                        let cfg = cell_config(&base, epsilon, seed, metric, v);
                        let forest = forest_of(forests, v.composition);
                        let settings = EvalSettings::from_config(&cfg, seed);
                        let e = evaluate(forest, sole_tree(forest), &p.test.dataset, &settings).map_err(|e| e.to_string())?;
                        Ok((e, *div))
                    });
                    match evaluated {
                        Ok((e, div)) => {
                            row.value = Some(metric_value(metric, &e));
                            row.clean_accuracy = Some(e.clean_accuracy);
                            row.avg_diversity = div.map(|d| d.0);
                            row.max_diversity = div.map(|d| d.1);
                        }
                        Err(msg) => {
                            log::warn!("cell {} {} seed {seed} failed: {msg}", entry.path, v);
                            row.status = format!("error: {msg}");
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    let summary = summarize_cells(&rows);
    Ok(ExperimentResults { rows, summary })
}

pub fn summarize_cells(rows: &[CellRow]) -> Vec<CellSummary> {
    let mut groups: Vec<(&CellRow, Vec<f64>, usize)> = Vec::new();
    for r in rows {
        let idx = match groups.iter().position(|g| g.0.dataset == r.dataset && g.0.variant == r.variant && g.0.metric == r.metric) {
            Some(i) => i,
            None => {
                groups.push((r, Vec::new(), 0));
                groups.len() - 1
            }
        };
        match r.value {
            Some(v) => groups[idx].1.push(v),
            None => groups[idx].2 += 1,
        }
    }
    groups
        .into_iter()
        .map(|(r, values, failures)| {
            let (mean, std) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&values) };
            CellSummary {
                dataset: r.dataset.clone(),
                variant: r.variant.clone(),
                metric: r.metric.clone(),
                n: values.len(),
                mean,
                std,
                failures,
            }
        })
        .collect()
}

/// A fresh `run-<unix seconds>[-k]` directory under `root`.
pub fn timestamped_dir(root: &Path) -> Result<PathBuf> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    std::fs::create_dir_all(root).map_err(|e| AppError::io(root, e))?;
    for k in 0.. {
        let name = if k == 0 { format!("run-{secs}") } else { format!("run-{secs}-{k}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(AppError::io(&dir, e)),
        }
    }
    unreachable!("unbounded search")
}

fn write_manifest(dir: &Path, kind: &str, spec: &ExperimentSpec, files: &[&str]) -> Result<()> {
    let manifest = json!({
        "format_version": crate::model_io::FORMAT_VERSION,
        "kind": kind,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "spec": serde_json::to_value(spec).expect("spec serializes"),
        "files": files,
    });
    crate::error::write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json") + "\n")
}

/// Writes `results.csv`, `summary.csv` and `manifest.json` into a new
/// timestamped directory under `root` and returns it.
pub fn write_experiment(root: &Path, spec: &ExperimentSpec, results: &ExperimentResults) -> Result<PathBuf> {
    let dir = timestamped_dir(root)?;
    write_rows(&dir.join("results.csv"), &results.rows)?;
    write_rows(&dir.join("summary.csv"), &results.summary)?;
    write_manifest(&dir, "experiment", spec, &["results.csv", "summary.csv"])?;
    Ok(dir)
}

pub const SETUPS: [&str; 3] = ["single-island", "independent-best", "archipelago"];

/// Champion-tree metrics of one setup in one (dataset, seed, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTreeRow {
    pub dataset: String,
    pub metric: String,
    pub seed: u64,
    pub setup: String,
    pub champion_fitness: f64,
    pub value: f64,
    pub clean_accuracy: f64,
}

/// Per dataset and metric: mean test value of each setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTreeSummary {
    pub dataset: String,
    pub metric: String,
    pub single_island: f64,
    pub independent_best: f64,
    pub archipelago: f64,
}

/// Archipelago configs for the three setups of a cell: one island, all
/// islands without migration, and all islands with migration. Island `i`
/// uses the same seed in each.
pub fn single_tree_setups(cfg: &RunConfig) -> Result<[coforest_core::ArchipelagoConfig; 3]> {
    let full = cfg.archipelago()?;
    let single = coforest_core::ArchipelagoConfig {
        num_islands: 1,
        island_seeds: Some(vec![derive_seed(cfg.seed, 0)]),
        ..full.clone()
    };
    let independent = coforest_core::ArchipelagoConfig { migration_size: 0, ..full.clone() };
    Ok([single, independent, full])
}

pub fn compare_single_tree(spec: &ExperimentSpec) -> Result<(Vec<SingleTreeRow>, Vec<SingleTreeSummary>)> {
    spec.validate()?;
    let base = spec.base_config()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for entry in &spec.datasets {
        let epsilon = spec.epsilon_for(entry)?;
        let label = entry.label.as_deref().map(|l| l.parse::<LabelColumn>().expect("infallible"));
        let data = datasets::load(&entry.path, label.as_ref(), None)?;
        for &metric in &spec.metrics {
            let mut per_setup: [Vec<f64>; 3] = Default::default();
            for &seed in &spec.seeds {
                let prepared = prepare(&data, base.test_fraction, seed)?;
                let cfg = RunConfig { epsilon, seed, metric, ..base.clone() };
                let settings = EvalSettings::from_config(&cfg, seed);
                for (k, arch) in single_tree_setups(&cfg)?.iter().enumerate() {
                    let result = run_archipelago(arch, &prepared.train.dataset, &[], cfg.threads)?;
                    let tree = &result.global_best_tree;
                    let e = evaluate(tree, Some(tree), &prepared.test.dataset, &settings)?;
                    let value = metric_value(metric, &e);
                    per_setup[k].push(value);
                    rows.push(SingleTreeRow {
                        dataset: data.dataset.name.clone(),
                        metric: metric.as_str().into(),
                        seed,
                        setup: SETUPS[k].into(),
                        champion_fitness: result.global_best_fitness,
                        value,
                        clean_accuracy: e.clean_accuracy,
                    });
                }
            }
            let mean = |v: &[f64]| mean_std(v).0;
            summary.push(SingleTreeSummary {
                dataset: data.dataset.name.clone(),
                metric: metric.as_str().into(),
                single_island: mean(&per_setup[0]),
                independent_best: mean(&per_setup[1]),
                archipelago: mean(&per_setup[2]),
            });
        }
    }
    Ok((rows, summary))
}

pub fn write_single_tree(
    root: &Path,
    spec: &ExperimentSpec,
    rows: &[SingleTreeRow],
    summary: &[SingleTreeSummary],
) -> Result<PathBuf> {
    let dir = timestamped_dir(root)?;
    write_rows(&dir.join("single_tree.csv"), rows)?;
    write_rows(&dir.join("single_tree_summary.csv"), summary)?;
    write_manifest(&dir, "compare-single-tree", spec, &["single_tree.csv", "single_tree_summary.csv"])?;
    Ok(dir)
}
