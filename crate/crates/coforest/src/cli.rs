//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use coforest_core::game::{solve, verify_equilibrium};
use coforest_core::metrics::ensemble_diversity;
use coforest_core::perturbation::sample_uniform;
use coforest_core::rng::seeded;
use coforest_core::{Dataset, DecisionTree, Matrix, PayoffMatrix};
use serde_json::json;

use crate::bench::{self, ExperimentSpec};
use crate::config::RunConfig;
use crate::csv_io::{read_matrix_csv, LabelColumn};
use crate::datasets;
use crate::error::{AppError, Result};
use crate::model_io::{load_model, load_trees, ModelFile, FORMAT_VERSION};
use crate::pipeline::{evaluate, sole_tree, train, EvalSettings};
use crate::report::{solver_name, summarize, write_rows, write_train_outputs, MetricRow};

#[derive(Debug, Parser)]
#[command(name = "coforest", version, about = "Coevolutionary training of robust decision forests")]
pub struct Cli {
    /// More logging: -v for progress per epoch, -vv per generation.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an archipelago and write the composed models.
    Train(RunArgs),
    /// Evaluate a saved model on a labelled CSV.
    Evaluate(EvalArgs),
    /// Pairwise disagreement of a model's members under random perturbations.
    Diversity(DiversityArgs),
    /// Nash versus equal voting, with bootstrap and same-input islands.
    Ablate(AblateArgs),
    /// Solve a zero-sum matrix game read from a header-less CSV.
    SolveGame(SolveArgs),
    /// Run an experiment grid described by a TOML spec.
    Experiment(SpecArgs),
    /// Compare one island, the best of independent islands and the full
    /// archipelago at producing a single tree.
    CompareSingleTree(SpecArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Reference population sizes and limits.
    Paper,
    /// Small budget for a laptop.
    Desk,
}

/// Configuration flags shared by the training commands. Precedence, lowest
/// first: preset, config file, individual flags, `--set`.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML config file; falls back to $COFOREST_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    /// CSV path or bundled:<name>.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Label column name or 0-based index.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// adversarial_accuracy or max_regret.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub islands: Option<usize>,
    #[arg(long)]
    pub generation_limit: Option<usize>,
    #[arg(long)]
    pub stagnation_limit: Option<usize>,
    #[arg(long)]
    pub tree_population: Option<usize>,
    #[arg(long)]
    pub perturbation_population: Option<usize>,
    #[arg(long)]
    pub migration_size: Option<usize>,
    /// ring, star, complete or custom.
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    pub report_format: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// JSON trees to place into island 0.
    #[arg(long)]
    pub inject: Option<PathBuf>,
    /// Every island sees the full training set instead of a bootstrap.
    #[arg(long)]
    pub same_input: bool,
    /// Make the equal-weight forest the primary model.
    #[arg(long)]
    pub equal_voting: bool,
    /// Any config key as key=value (TOML value syntax), repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV path or bundled:<name>, in raw (unscaled) units.
    #[arg(long)]
    pub data: String,
    /// Label column; defaults to the model's label column name.
    #[arg(long)]
    pub label: Option<String>,
    /// Defaults to the radius the model was trained for.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Sampled perturbations for the adversarial accuracy.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 100_000)]
    pub regret_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DiversityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Uniform perturbations of the data to evaluate on.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Seeds to run; defaults to `repeats` consecutive seeds from `seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Header-less numeric CSV, `-` for stdin. Row player maximizes.
    pub matrix: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SpecArgs {
    pub spec: PathBuf,
    /// Parent of the timestamped run directory.
    #[arg(long, default_value = "coforest-runs")]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match self.preset {
            Preset::Paper => RunConfig::default(),
            Preset::Desk => RunConfig::desk(),
        };
        let cfg = RunConfig::resolve(self.config.as_deref(), base)?;
        cfg.merged(self.overrides()?)
    }

    fn overrides(&self) -> Result<toml::Table> {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: toml::Value| {
            t.insert(k.to_string(), v);
        };
        let int = |v: usize| toml::Value::Integer(v as i64);
        let text = |v: &str| toml::Value::String(v.to_string());
        let path = |v: &Path| toml::Value::String(v.display().to_string());
        if let Some(v) = &self.dataset {
            put("dataset", text(v));
        }
        if let Some(v) = &self.label {
            put("label", text(v));
        }
        if let Some(v) = self.seed {
            let v = i64::try_from(v).map_err(|_| AppError::Usage(format!("seed {v} too large for a config value")))?;
            put("seed", toml::Value::Integer(v));
        }
        if let Some(v) = self.epsilon {
            put("epsilon", toml::Value::Float(v));
        }
        if let Some(v) = &self.metric {
            put("metric", text(v));
        }
        for (key, v) in [
            ("islands", self.islands),
            ("generation_limit", self.generation_limit),
            ("stagnation_limit", self.stagnation_limit),
            ("tree_population", self.tree_population),
            ("perturbation_population", self.perturbation_population),
            ("migration_size", self.migration_size),
            ("threads", self.threads),
            ("repeats", self.repeats),
        ] {
            if let Some(v) = v {
                put(key, int(v));
            }
        }
        if let Some(v) = &self.topology {
            put("topology", text(v));
        }
        if let Some(v) = &self.output {
            put("output", path(v));
        }
        if let Some(v) = &self.report_format {
            put("report_format", text(v));
        }
        if let Some(v) = &self.inject {
            put("inject", path(v));
        }
        if self.same_input {
            put("same_input", toml::Value::Boolean(true));
        }
        if self.equal_voting {
            put("equal_voting", toml::Value::Boolean(true));
        }
        for kv in &self.set {
            let parsed: toml::Table =
                toml::from_str(kv).map_err(|e| AppError::Usage(format!("--set `{kv}`: {}", e.message())))?;
            t.extend(parsed);
        }
        Ok(t)
    }
}

fn label_arg(label: Option<&str>) -> Option<LabelColumn> {
    label.map(|l| l.parse().expect("infallible"))
}

fn training_data(cfg: &RunConfig) -> Result<crate::csv_io::LabeledData> {
    let spec = cfg.dataset.as_deref().ok_or_else(|| AppError::Usage("no dataset given (--dataset)".into()))?;
    datasets::load(spec, label_arg(cfg.label.as_deref()).as_ref(), None)
}

fn injected_trees(cfg: &RunConfig) -> Result<Vec<DecisionTree>> {
    cfg.inject.as_deref().map_or(Ok(Vec::new()), load_trees)
}

/// Consecutive seeds starting at the configured one.
fn repeat_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.repeats as u64).map(|k| cfg.seed.wrapping_add(k)).collect()
}

fn cmd_train(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    let data = training_data(&cfg)?;
    let injected = injected_trees(&cfg)?;
    let seeds = repeat_seeds(&cfg);
    let mut rows = Vec::new();
    for &seed in &seeds {
        let cfg = RunConfig { seed, ..cfg.clone() };
        let dir = if seeds.len() == 1 { cfg.output.clone() } else { cfg.output.join(format!("seed-{seed}")) };
        let run = train(&cfg, &data, &injected)?;
        write_train_outputs(&dir, &cfg, &run)?;
        let e = if cfg.equal_voting { &run.equal_eval } else { &run.nash_eval };
        writeln!(
            out,
            "seed={seed} stop={} generations={} clean_accuracy={:.4} adversarial_accuracy={:.4} max_regret={:.4} output={}",
            run.result.stop_reason.as_str(),
            run.result.total_generations,
            e.clean_accuracy,
            e.adversarial_accuracy,
            e.max_regret,
            dir.display()
        )
        .map_err(stdout_error)?;
        rows.extend(crate::report::train_rows(&run, seed));
    }
    if seeds.len() > 1 {
        write_rows(&cfg.output.join("metrics.csv"), &rows)?;
        write_rows(&cfg.output.join("summary.csv"), &summarize(&rows))?;
    }
    Ok(())
}

fn stdout_error(e: std::io::Error) -> AppError {
    AppError::io("<stdout>", e)
}

/// The data mapped into the model's input space.
fn model_inputs(model: &ModelFile, spec: &str, label: Option<&str>) -> Result<Dataset> {
    let label = label_arg(label).unwrap_or_else(|| LabelColumn::Name(model.label_name.clone()));
    let data = datasets::load(spec, Some(&label), Some(&model.class_names))?;
    let raw = data.dataset;
    if raw.num_features() != model.num_features() {
        return Err(AppError::Format(format!(
            "{spec}: {} features, the model expects {}",
            raw.num_features(),
            model.num_features()
        )));
    }
    match &model.scaling {
        Some(s) => Ok(s.apply(&raw)?),
        None => Ok(raw),
    }
}

fn cmd_evaluate(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = model_inputs(&model, &args.data, args.label.as_deref())?;
    let epsilon = args.epsilon.unwrap_or(model.forest.metadata.epsilon);
    let settings = EvalSettings {
        epsilon,
        attack_samples: args.samples,
        regret_samples: args.regret_samples,
        seed: args.seed,
        cart: coforest_core::CartParams::default(),
    };
    let forest = &model.forest;
    let e = evaluate(forest, sole_tree(forest), &data, &settings)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let exact = e.adversarial_accuracy_exact.map(|v| v.to_string()).unwrap_or_default();
    let cells = [
        ("model", args.model.display().to_string()),
        ("dataset", data.name.clone()),
        ("composition", forest.metadata.composition.as_str().to_string()),
        ("members", forest.support().count().to_string()),
        ("epsilon", epsilon.to_string()),
        ("samples", args.samples.to_string()),
        ("clean_accuracy", e.clean_accuracy.to_string()),
        ("adversarial_accuracy", e.adversarial_accuracy.to_string()),
        ("adversarial_accuracy_exact", exact),
        ("max_regret", e.max_regret.to_string()),
    ];
    let csv_err = |e: csv::Error| AppError::Format(e.to_string());
    wtr.write_record(cells.iter().map(|c| c.0)).map_err(csv_err)?;
    wtr.write_record(cells.iter().map(|c| c.1.as_str())).map_err(csv_err)?;
    out.write_all(&wtr.into_inner().map_err(|e| AppError::Format(e.to_string()))?).map_err(stdout_error)
}

fn cmd_diversity(args: &DiversityArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = model_inputs(&model, &args.data, args.label.as_deref())?;
    let trees: Vec<&DecisionTree> = model.forest.support().map(|m| &m.0).collect();
    if trees.len() < 2 {
        return Err(AppError::Usage(format!(
            "{}: diversity needs at least two members with positive weight, found {}",
            args.model.display(),
            trees.len()
        )));
    }
    if args.samples == 0 {
        return Err(AppError::Usage("--samples must be at least 1".into()));
    }
    let epsilon = args.epsilon.unwrap_or(model.forest.metadata.epsilon);
    let mut rng = seeded(args.seed);
    let (n, d) = (data.len(), data.num_features());
    let mut set = Matrix::zeros(n * args.samples, d);
    for s in 0..args.samples {
        let applied = sample_uniform(n, d, epsilon, &mut rng).apply_to(&data.instances)?;
        for (r, row) in applied.iter_rows().enumerate() {
            set.row_mut(s * n + r).copy_from_slice(row);
        }
    }
    let (avg, max) = ensemble_diversity(&trees, &set)?;
    writeln!(out, "model,dataset,members,epsilon,samples,avg_diversity,max_diversity").map_err(stdout_error)?;
    writeln!(out, "{},{},{},{epsilon},{},{avg},{max}", args.model.display(), data.name, trees.len(), args.samples)
        .map_err(stdout_error)
}

fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.run.resolve()?;
    let data = training_data(&cfg)?;
    let injected = injected_trees(&cfg)?;
    let seeds = if args.seeds.is_empty() { repeat_seeds(&cfg) } else { args.seeds.clone() };
    let mut rows = Vec::new();
    for &seed in &seeds {
        for same_input in [false, true] {
            let cfg = RunConfig { seed, same_input, ..cfg.clone() };
            let run = train(&cfg, &data, &injected)?;
            let suffix = if same_input { "-same-input" } else { "" };
            let (avg, max) = run.diversity.external.unwrap_or((f64::NAN, f64::NAN));
            for (method, e) in [("nash", &run.nash_eval), ("equal", &run.equal_eval)] {
                for (metric, value) in [
                    ("adversarial_accuracy", e.adversarial_accuracy),
                    ("max_regret", e.max_regret),
                    ("avg_diversity", avg),
                    ("max_diversity", max),
                ] {
                    rows.push(MetricRow {
                        dataset: data.dataset.name.clone(),
                        method: format!("{method}{suffix}"),
                        metric: metric.into(),
                        value,
                        seed,
                    });
                }
            }
        }
    }
    // long rows sorted by metric, then seed, then variant
    rows.sort_by(|a, b| (&a.metric, a.seed).cmp(&(&b.metric, b.seed)));
    std::fs::create_dir_all(&cfg.output).map_err(|e| AppError::io(&cfg.output, e))?;
    write_rows(&cfg.output.join("ablation.csv"), &rows)?;
    let summary = summarize(&rows);
    write_rows(&cfg.output.join("ablation_summary.csv"), &summary)?;
    out.write_all(crate::report::rows_to_csv(&summary).as_bytes()).map_err(stdout_error)
}

fn cmd_solve_game(args: &SolveArgs, out: &mut dyn Write) -> Result<()> {
    let matrix = if args.matrix.as_os_str() == "-" {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut text).map_err(|e| AppError::io("<stdin>", e))?;
        crate::csv_io::parse_matrix_csv(&text, "<stdin>")?
    } else {
        read_matrix_csv(&args.matrix)?
    };
    let game = PayoffMatrix::new(matrix)?;
    let (eq, solver) = solve(&game)?;
    if !verify_equilibrium(&game, &eq, 1e-6) {
        return Err(AppError::Format("solver result failed equilibrium verification".into()));
    }
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "row_strategy": eq.row_probs,
        "col_strategy": eq.col_probs,
        "value": eq.value,
        "solver": solver_name(solver),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(stdout_error)
}

fn load_spec(args: &SpecArgs) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if let Some(t) = args.threads {
        spec.budget.insert("threads".into(), toml::Value::Integer(t as i64));
        spec.validate()?;
    }
    Ok(spec)
}

fn cmd_experiment(args: &SpecArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_spec(args)?;
    let results = bench::run_experiment(&spec)?;
    let dir = bench::write_experiment(&args.output_dir, &spec, &results)?;
    let failed = results.rows.iter().filter(|r| r.status != "ok").count();
    writeln!(out, "cells={} failed={failed} output={}", results.rows.len(), dir.display()).map_err(stdout_error)?;
    out.write_all(crate::report::rows_to_csv(&results.summary).as_bytes()).map_err(stdout_error)
}

fn cmd_compare_single_tree(args: &SpecArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_spec(args)?;
    let (rows, summary) = bench::compare_single_tree(&spec)?;
    let dir = bench::write_single_tree(&args.output_dir, &spec, &rows, &summary)?;
    writeln!(out, "runs={} output={}", rows.len(), dir.display()).map_err(stdout_error)?;
    out.write_all(crate::report::rows_to_csv(&summary).as_bytes()).map_err(stdout_error)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Diversity(a) => cmd_diversity(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::SolveGame(a) => cmd_solve_game(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
        Command::CompareSingleTree(a) => cmd_compare_single_tree(a, out),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("coforest").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flag_precedence() {
        let cli = parse(&[
            "train",
            "--preset",
            "desk",
            "--islands",
            "3",
            "--seed",
            "7",
            "--set",
            "islands = 5",
            "--set",
            "crossover_prob = 0.5",
            "--same-input",
            "--dataset",
            "bundled:iris",
        ]);
        let Command::Train(args) = &cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.islands, cfg.seed, cfg.tree_population), (5, 7, 40));
        assert_eq!(cfg.crossover_prob, 0.5);
        assert!(cfg.same_input);
        assert_eq!(cfg.dataset.as_deref(), Some("bundled:iris"));
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let cli = parse(&["train", "--metric", "accuracy"]);
        let Command::Train(args) = &cli.command else { panic!() };
        assert!(matches!(args.resolve(), Err(AppError::Config(_))));
        let cli = parse(&["train", "--set", "not toml"]);
        let Command::Train(args) = &cli.command else { panic!() };
        assert!(matches!(args.resolve(), Err(AppError::Usage(_))));
    }

    #[test]
    fn solve_game_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mp.csv");
        std::fs::write(&path, "1,-1\n-1,1\n").unwrap();
        let cli = parse(&["solve-game", path.to_str().unwrap()]);
        let mut out = Vec::new();
        run(&cli, &mut out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        for key in ["row_strategy", "col_strategy"] {
            for p in v[key].as_array().unwrap() {
                assert!((p.as_f64().unwrap() - 0.5).abs() < 1e-12);
            }
        }
        assert!(v["value"].as_f64().unwrap().abs() < 1e-12);
        assert_eq!(v["solver"], "lemke_howson");
    }
}

