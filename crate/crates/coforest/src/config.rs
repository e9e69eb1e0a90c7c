//! Run configuration: one flat TOML table, overridable from the command line.
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected so typos do not silently fall back to a default.

use std::path::{Path, PathBuf};

use coforest_core::archipelago::{ArchipelagoConfig, TopologyKind};
use coforest_core::island::IslandParams;
use coforest_core::{CartParams, MetricKind};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable naming a config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "COFOREST_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,

    /// CSV path or `bundled:<name>`.
    pub dataset: Option<String>,
    /// Label column name or 0-based index; the last column when unset.
    pub label: Option<String>,
    pub test_fraction: f64,
    pub output: PathBuf,
    pub report_format: ReportFormat,
    pub regret_samples: usize,
    /// Sampled perturbations for the empirical adversarial accuracy.
    pub attack_samples: usize,
    pub repeats: usize,
    pub threads: Option<usize>,
    /// JSON file with external trees placed into island 0.
    pub inject: Option<PathBuf>,

    pub seed: u64,
    pub islands: usize,
    pub migration_size: usize,
    pub topology: TopologyKind,
    pub custom_neighbors: Option<Vec<Vec<usize>>>,
    pub generation_limit: usize,
    pub stagnation_limit: usize,

    pub tree_population: usize,
    pub perturbation_population: usize,
    pub block_generations: usize,
    pub epoch_generations: usize,
    pub top_trees: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub selection_pressure: f64,
    pub elite: usize,
    pub hof_size: usize,
    pub epsilon: f64,
    pub metric: MetricKind,
    pub max_depth: usize,
    pub init_depth: usize,
    pub leaf_prob: f64,
    pub cart_max_depth: usize,
    pub cart_min_leaf: usize,
    pub max_payoff_rows: usize,
    pub max_payoff_cols: usize,

    pub same_input: bool,
    pub equal_voting: bool,
    /// Fittest perturbations per island used for diversity reporting.
    pub diversity_perturbations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = ArchipelagoConfig::default();
        let isl = IslandParams::default();
        Self {
            format_version: FORMAT_VERSION,
            dataset: None,
            label: None,
            test_fraction: 0.3,
            output: PathBuf::from("coforest-out"),
            report_format: ReportFormat::Json,
            regret_samples: 100_000,
            attack_samples: 1000,
            repeats: 1,
            threads: None,
            inject: None,
            seed: arch.seed,
            islands: arch.num_islands,
            migration_size: arch.migration_size,
            topology: arch.topology,
            custom_neighbors: None,
            generation_limit: arch.generation_limit,
            stagnation_limit: arch.stagnation_limit,
            tree_population: isl.tree_population,
            perturbation_population: isl.perturbation_population,
            block_generations: isl.block_generations,
            epoch_generations: isl.epoch_generations,
            top_trees: isl.top_trees,
            crossover_prob: isl.crossover_prob,
            mutation_prob: isl.mutation_prob,
            selection_pressure: isl.selection_pressure,
            elite: isl.elite,
            hof_size: isl.hof_size,
            epsilon: isl.epsilon,
            metric: isl.metric,
            max_depth: isl.max_depth,
            init_depth: isl.init_depth,
            leaf_prob: isl.leaf_prob,
            cart_max_depth: isl.cart.max_depth,
            cart_min_leaf: isl.cart.min_leaf,
            max_payoff_rows: isl.max_payoff_rows,
            max_payoff_cols: isl.max_payoff_cols,
            same_input: false,
            equal_voting: false,
            diversity_perturbations: 10,
        }
    }
}

impl RunConfig {
    /// Small budget that trains in seconds on the bundled datasets.
    pub fn desk() -> Self {
        Self {
            tree_population: 40,
            perturbation_population: 60,
            islands: 4,
            generation_limit: 120,
            stagnation_limit: 1000,
            regret_samples: 1000,
            attack_samples: 1000,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_over(text, Self::default())
    }

    /// Keys in `text` replace the matching fields of `base`.
    pub fn from_toml_over(text: &str, base: Self) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        base.merged(overrides)
    }

    pub fn merged(&self, overrides: toml::Table) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| AppError::Config(e.to_string()))?;
        table.extend(overrides);
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }

    /// The file named by `explicit`, else by the environment variable, else
    /// the defaults.
    pub fn resolve(explicit: Option<&Path>, base: Self) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(env_path) {
            Some(path) => {
                let text = crate::error::read_to_string(&path)?;
                Self::from_toml_over(&text, base).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
            }
            None => Ok(base),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks the fields owned by this layer; the evolutionary ones are
    /// validated by [`ArchipelagoConfig::validate`].
    pub fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(AppError::Config(format!("unsupported format_version {}", self.format_version)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(AppError::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.repeats == 0 {
            return Err(AppError::Config("repeats must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(AppError::Config("threads must be at least 1".into()));
        }
        self.archipelago()?.validate()?;
        Ok(())
    }

    pub fn island_params(&self) -> IslandParams {
        IslandParams {
            tree_population: self.tree_population,
            perturbation_population: self.perturbation_population,
            block_generations: self.block_generations,
            epoch_generations: self.epoch_generations,
            top_trees: self.top_trees,
            crossover_prob: self.crossover_prob,
            mutation_prob: self.mutation_prob,
            selection_pressure: self.selection_pressure,
            elite: self.elite,
            hof_size: self.hof_size,
            epsilon: self.epsilon,
            metric: self.metric,
            max_depth: self.max_depth,
            init_depth: self.init_depth,
            leaf_prob: self.leaf_prob,
            cart: self.cart(),
            same_input: self.same_input,
            max_payoff_rows: self.max_payoff_rows,
            max_payoff_cols: self.max_payoff_cols,
        }
    }

    pub fn cart(&self) -> CartParams {
        CartParams { max_depth: self.cart_max_depth, min_leaf: self.cart_min_leaf }
    }

    pub fn archipelago(&self) -> Result<ArchipelagoConfig> {
        Ok(ArchipelagoConfig {
            island: self.island_params(),
            num_islands: self.islands,
            migration_size: self.migration_size,
            topology: self.topology,
            custom_neighbors: self.custom_neighbors.clone(),
            generation_limit: self.generation_limit,
            stagnation_limit: self.stagnation_limit,
            seed: self.seed,
            island_seeds: None,
        })
    }
}
