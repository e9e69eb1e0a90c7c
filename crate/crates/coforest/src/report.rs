//! Training outputs and tabular reports.
//!
//! Metric tables are long-format CSV with the columns
//! `dataset,method,metric,value,seed`; run metadata goes to JSON.

use std::path::Path;

use coforest_core::game::SolverUsed;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ReportFormat, RunConfig};
use crate::csv_io::write_csv;
use crate::error::{AppError, Result};
use crate::model_io::{save_model, FORMAT_VERSION};
use crate::pipeline::{model_file, Evaluation, TrainRun};

pub const NASH_MODEL: &str = "forest_nash.json";
pub const EQUAL_MODEL: &str = "forest_equal.json";
pub const SINGLE_MODEL: &str = "tree_single.json";
pub const TEST_SPLIT: &str = "test.csv";
pub const REPORT: &str = "report.json";
pub const METRICS: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn solver_name(s: SolverUsed) -> &'static str {
    match s {
        SolverUsed::LemkeHowson => "lemke_howson",
        SolverUsed::Oracle => "oracle",
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut out);
        for row in rows {
            wtr.serialize(row).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))?;
        }
        wtr.flush().map_err(|e| AppError::io(path, e))?;
    }
    crate::error::write(path, out)
}

pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row).expect("rows serialize");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory writer")).expect("utf-8")
}

/// Mean and sample standard deviation of `value` per
/// (dataset, method, metric), in order of first appearance.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(&str, &str, &str, Vec<f64>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| g.0 == r.dataset && g.1 == r.method && g.2 == r.metric) {
            Some(g) => g.3.push(r.value),
            None => groups.push((&r.dataset, &r.method, &r.metric, vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|(dataset, method, metric, values)| {
            let (mean, std) = mean_std(&values);
            SummaryRow {
                dataset: dataset.into(),
                method: method.into(),
                metric: metric.into(),
                n: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn evaluation_rows(dataset: &str, method: &str, seed: u64, e: &Evaluation) -> Vec<MetricRow> {
    let mut rows = vec![
        ("clean_accuracy", e.clean_accuracy),
        ("adversarial_accuracy", e.adversarial_accuracy),
        ("max_regret", e.max_regret),
    ];
    if let Some(exact) = e.adversarial_accuracy_exact {
        rows.push(("adversarial_accuracy_exact", exact));
    }
    rows.into_iter()
        .map(|(metric, value)| MetricRow {
            dataset: dataset.into(),
            method: method.into(),
            metric: metric.into(),
            value,
            seed,
        })
        .collect()
}

pub fn train_rows(run: &TrainRun, seed: u64) -> Vec<MetricRow> {
    let name = &run.prepared.train.dataset.name;
    let mut rows = evaluation_rows(name, run.forests.nash.forest.metadata.composition.as_str(), seed, &run.nash_eval);
    rows.extend(evaluation_rows(name, "equal", seed, &run.equal_eval));
    rows.extend(evaluation_rows(name, "single", seed, &run.single_eval));
    rows
}

fn evaluation_json(e: &Evaluation) -> serde_json::Value {
    json!({
        "clean_accuracy": e.clean_accuracy,
        "adversarial_accuracy": e.adversarial_accuracy,
        "adversarial_accuracy_exact": e.adversarial_accuracy_exact,
        "max_regret": e.max_regret,
    })
}

pub fn train_report(cfg: &RunConfig, run: &TrainRun) -> serde_json::Value {
    let r = &run.result;
    let islands: Vec<_> = r
        .islands
        .iter()
        .zip(&r.best_tree_per_island)
        .map(|(isl, (tree, fitness))| {
            json!({
                "id": isl.id(),
                "best_fitness": fitness,
                "champion_depth": tree.depth(),
                "champion_nodes": tree.node_count(),
                "hof_size": isl.hof().len(),
                "generations": isl.generation(),
            })
        })
        .collect();
    let nash = &run.forests.nash;
    let (value, solver) = match &nash.equilibrium {
        Some((eq, solver)) => (Some(eq.value), Some(solver_name(*solver))),
        None => (None, None),
    };
    json!({
        "format_version": FORMAT_VERSION,
        "dataset": run.prepared.train.dataset.name,
        "seed": cfg.seed,
        "metric": cfg.metric.as_str(),
        "epsilon": cfg.epsilon,
        "train_size": run.prepared.train.dataset.len(),
        "test_size": run.prepared.test.dataset.len(),
        "stop_reason": r.stop_reason.as_str(),
        "total_generations": r.total_generations,
        "wall_time_seconds": run.wall_time.as_secs_f64(),
        "islands": islands,
        "global_best_island": r.global_best_island,
        "global_best_fitness": r.global_best_fitness,
        "composition": {
            "method": nash.forest.metadata.composition.as_str(),
            "weights": nash.forest.weights().collect::<Vec<_>>(),
            "game_value": value,
            "solver": solver,
            "payoff_shape": [nash.payoff.rows(), nash.payoff.cols()],
        },
        "evaluation": {
            "nash": evaluation_json(&run.nash_eval),
            "equal": evaluation_json(&run.equal_eval),
            "single": evaluation_json(&run.single_eval),
        },
        "diversity": {
            "external_avg": run.diversity.external.map(|d| d.0),
            "external_max": run.diversity.external.map(|d| d.1),
            "internal_avg": run.diversity.internal.0,
            "internal_max": run.diversity.internal.1,
        },
        "primary_model": if cfg.equal_voting { EQUAL_MODEL } else { NASH_MODEL },
        "config": serde_json::to_value(cfg).expect("config serializes"),
    })
}

/// Model files, the raw test split, `report.json` and, for CSV reports,
/// `metrics.csv`.
pub fn write_train_outputs(dir: &Path, cfg: &RunConfig, run: &TrainRun) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    save_model(&dir.join(NASH_MODEL), &model_file(&run.forests.nash.forest, &run.prepared))?;
    save_model(&dir.join(EQUAL_MODEL), &model_file(&run.forests.equal, &run.prepared))?;
    save_model(&dir.join(SINGLE_MODEL), &model_file(&run.forests.single, &run.prepared))?;
    write_csv(&dir.join(TEST_SPLIT), &run.prepared.test_raw)?;
    let report = serde_json::to_string_pretty(&train_report(cfg, run)).expect("report serializes");
    crate::error::write(&dir.join(REPORT), report + "\n")?;
    if cfg.report_format == ReportFormat::Csv {
        write_rows(&dir.join(METRICS), &train_rows(run, cfg.seed))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, value: f64, seed: u64) -> MetricRow {
        MetricRow { dataset: "d".into(), method: method.into(), metric: "m".into(), value, seed }
    }

    #[test]
    fn summary_matches_hand_computation() {
        let rows = [row("a", 1.0, 0), row("b", 0.5, 0), row("a", 2.0, 1), row("a", 6.0, 2)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].method.as_str(), s[0].n, s[0].mean), ("a", 3, 3.0));
        assert!((s[0].std - 7.0f64.sqrt()).abs() < 1e-12);
        assert_eq!((s[1].n, s[1].mean, s[1].std), (1, 0.5, 0.0));
    }

    #[test]
    fn csv_schema() {
        let text = rows_to_csv(&[row("a", 0.25, 3)]);
        assert_eq!(text, "dataset,method,metric,value,seed\nd,a,m,0.25,3\n");
    }
}
