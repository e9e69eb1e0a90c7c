//! Shared steps of the commands: splitting and scaling data, training,
//! composing the forests and evaluating them.

use std::time::{Duration, Instant};

use coforest_core::archipelago::{run_with, ArchipelagoConfig, ArchipelagoResult};
use coforest_core::data::{normalize, train_test_split};
use coforest_core::ensemble::{compose_equal, compose_nash, compose_single, diversity_evaluation_set, Composition};
use coforest_core::metrics::{
    accuracy, adversarial_accuracy_exact_tree, adversarial_accuracy_sampled, ensemble_diversity, max_regret_empirical,
};
use coforest_core::rng::{derive_seed, seeded};
use coforest_core::{CartParams, Classifier, Dataset, DecisionTree, Forest, Matrix, ScalingRecord};

use crate::config::RunConfig;
use crate::csv_io::LabeledData;
use crate::error::Result;
use crate::executor::executor;
use crate::model_io::ModelFile;

/// Stream indices for seeds derived from the run seed. Islands use
/// `0..islands`, so these sit at the top of the range.
const SPLIT_STREAM: u64 = u64::MAX;
const EVAL_STREAM: u64 = u64::MAX - 1;

/// Train and test splits scaled into the unit cube with the training
/// ranges, plus the raw test split for writing back to disk.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: LabeledData,
    pub test: LabeledData,
    pub test_raw: LabeledData,
    pub scaling: ScalingRecord,
}

pub fn prepare(data: &LabeledData, test_fraction: f64, seed: u64) -> Result<Prepared> {
    let mut rng = seeded(derive_seed(seed, SPLIT_STREAM));
    let (train_raw, test_raw) = train_test_split(&data.dataset, test_fraction, &mut rng)?;
    let (train, scaling) = normalize(&train_raw);
    let test = scaling.apply(&test_raw)?;
    let wrap = |dataset: Dataset| LabeledData {
        dataset,
        class_names: data.class_names.clone(),
        label_name: data.label_name.clone(),
    };
    Ok(Prepared { train: wrap(train), test: wrap(test), test_raw: wrap(test_raw), scaling })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub clean_accuracy: f64,
    /// Worst case over the clean data and the sampled perturbations.
    pub adversarial_accuracy: f64,
    /// Exact value, only for single-tree models.
    pub adversarial_accuracy_exact: Option<f64>,
    pub max_regret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub epsilon: f64,
    pub attack_samples: usize,
    pub regret_samples: usize,
    pub seed: u64,
    pub cart: CartParams,
}

impl EvalSettings {
    pub fn from_config(cfg: &RunConfig, seed: u64) -> Self {
        Self {
            epsilon: cfg.epsilon,
            attack_samples: cfg.attack_samples,
            regret_samples: cfg.regret_samples,
            seed,
            cart: cfg.cart(),
        }
    }
}

/// Every model evaluated with the same settings sees the same sampled
/// perturbations.
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    single_tree: Option<&DecisionTree>,
    data: &Dataset,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let (x, y) = (&data.instances, &data.labels[..]);
    let stream = derive_seed(settings.seed, EVAL_STREAM);
    let mut attack_rng = seeded(derive_seed(stream, 0));
    let mut regret_rng = seeded(derive_seed(stream, 1));
    Ok(Evaluation {
        clean_accuracy: accuracy(model, x, y)?,
        adversarial_accuracy: adversarial_accuracy_sampled(
            model,
            x,
            y,
            settings.epsilon,
            settings.attack_samples,
            &mut attack_rng,
        )?,
        adversarial_accuracy_exact: single_tree
            .map(|t| adversarial_accuracy_exact_tree(t, x, y, settings.epsilon))
            .transpose()?,
        max_regret: max_regret_empirical(
            model,
            x,
            y,
            settings.epsilon,
            settings.regret_samples,
            &mut regret_rng,
            &settings.cart,
        )?,
    })
}

/// The only positive-weight tree of a forest, if there is exactly one.
pub fn sole_tree(forest: &Forest) -> Option<&DecisionTree> {
    let mut support = forest.support();
    match (support.next(), support.next()) {
        (Some((t, _)), None) => Some(t),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diversity {
    /// Among island champions; `None` with a single island.
    pub external: Option<(f64, f64)>,
    /// Mean over islands of the population diversity.
    pub internal: (f64, f64),
}

pub fn diversity(result: &ArchipelagoResult, test: &Matrix, per_island: usize) -> Result<Diversity> {
    let set = diversity_evaluation_set(result, test, per_island)?;
    let champions: Vec<&DecisionTree> = result.best_tree_per_island.iter().map(|t| &t.0).collect();
    let external = if champions.len() >= 2 { Some(ensemble_diversity(&champions, &set)?) } else { None };
    let mut internal = (0.0, 0.0);
    let mut counted = 0;
    for isl in &result.islands {
        let trees: Vec<&DecisionTree> = isl.trees().collect();
        if trees.len() >= 2 {
            let (avg, max) = ensemble_diversity(&trees, &set)?;
            internal.0 += avg;
            internal.1 += max;
            counted += 1;
        }
    }
    if counted > 0 {
        internal = (internal.0 / counted as f64, internal.1 / counted as f64);
    }
    Ok(Diversity { external, internal })
}

pub fn run_archipelago(
    config: &ArchipelagoConfig,
    train: &Dataset,
    injected: &[DecisionTree],
    threads: Option<usize>,
) -> Result<ArchipelagoResult> {
    let exec = executor(threads)?;
    let dataset = std::sync::Arc::new(train.clone());
    Ok(run_with(dataset, config, injected, exec.as_ref(), &mut |report| {
        log::info!(
            "epoch={} generations={} global_best={}",
            report.epoch,
            report.total_generations,
            report.global_best_fitness
        );
    })?)
}

/// The three composed models of one run.
#[derive(Debug, Clone)]
pub struct Forests {
    pub nash: Composition,
    pub equal: Forest,
    pub single: Forest,
}

pub fn compose(result: &ArchipelagoResult) -> Result<Forests> {
    Ok(Forests { nash: compose_nash(result)?, equal: compose_equal(result)?, single: compose_single(result)? })
}

pub fn model_file(forest: &Forest, prepared: &Prepared) -> ModelFile {
    ModelFile {
        forest: forest.clone(),
        feature_names: prepared.train.dataset.feature_names.clone(),
        class_names: prepared.train.class_names.clone(),
        label_name: prepared.train.label_name.clone(),
        scaling: Some(prepared.scaling.clone()),
    }
}

/// Everything `train` produces.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub prepared: Prepared,
    pub result: ArchipelagoResult,
    pub forests: Forests,
    pub nash_eval: Evaluation,
    pub equal_eval: Evaluation,
    pub single_eval: Evaluation,
    pub diversity: Diversity,
    pub wall_time: Duration,
}

pub fn train(cfg: &RunConfig, data: &LabeledData, injected: &[DecisionTree]) -> Result<TrainRun> {
    cfg.check()?;
    let start = Instant::now();
    let prepared = prepare(data, cfg.test_fraction, cfg.seed)?;
    let arch = cfg.archipelago()?;
    let result = run_archipelago(&arch, &prepared.train.dataset, injected, cfg.threads)?;
    let forests = compose(&result)?;
    let settings = EvalSettings::from_config(cfg, cfg.seed);
    let test = &prepared.test.dataset;
    let nash_eval = evaluate(&forests.nash.forest, sole_tree(&forests.nash.forest), test, &settings)?;
    let equal_eval = evaluate(&forests.equal, sole_tree(&forests.equal), test, &settings)?;
    let single_eval = evaluate(&forests.single, sole_tree(&forests.single), test, &settings)?;
    let diversity = diversity(&result, &test.instances, cfg.diversity_perturbations)?;
    Ok(TrainRun {
        prepared,
        result,
        forests,
        nash_eval,
        equal_eval,
        single_eval,
        diversity,
        wall_time: start.elapsed(),
    })
}
