//! Several islands evolving side by side and exchanging their fittest
//! individuals along a migration topology between epochs.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::island::{fittest_indices, Island, IslandParams};
use crate::rng::derive_seed;
use crate::tree::DecisionTree;

/// Improvements smaller than this do not reset the stagnation counter.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TopologyKind {
    Ring,
    Star,
    Complete,
    Custom,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ring => "ring",
            Self::Star => "star",
            Self::Complete => "complete",
            Self::Custom => "custom",
        }
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Self::Ring),
            "star" => Ok(Self::Star),
            "complete" => Ok(Self::Complete),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Directed neighbor lists: island `i` receives migrants from `neighbors(i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// A topology from explicit neighbor lists.
    pub fn custom(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        if n == 0 {
            return Err(Error::Config("topology needs at least one island".into()));
        }
        for (i, list) in neighbors.iter().enumerate() {
            for (k, &j) in list.iter().enumerate() {
                if j >= n {
                    return Err(Error::Config(format!("island {i} lists neighbor {j} but only {n} islands exist")));
                }
                if j == i {
                    return Err(Error::Config(format!("island {i} lists itself as a neighbor")));
                }
                if list[..k].contains(&j) {
                    return Err(Error::Config(format!("island {i} lists neighbor {j} twice")));
                }
            }
        }
        Ok(Self { kind: TopologyKind::Custom, neighbors })
    }

    /// `n` islands without any connections.
    pub fn isolated(n: usize) -> Self {
        Self { kind: TopologyKind::Custom, neighbors: (0..n).map(|_| Vec::new()).collect() }
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn num_islands(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, island: usize) -> &[usize] {
        &self.neighbors[island]
    }
}

/// Standard topologies. Custom graphs go through [`Topology::custom`].
pub fn build_topology(kind: TopologyKind, num_islands: usize) -> Result<Topology> {
    let n = num_islands;
    if n < 2 {
        return Err(Error::Config(format!("{kind} topology needs at least 2 islands, got {n}")));
    }
    let neighbors = match kind {
        TopologyKind::Ring => (0..n)
            .map(|i| {
                let (prev, next) = ((i + n - 1) % n, (i + 1) % n);
                if prev == next {
                    alloc::vec![prev]
                } else {
                    alloc::vec![prev, next]
                }
            })
            .collect(),
        TopologyKind::Star => (0..n).map(|i| if i == 0 { (1..n).collect() } else { alloc::vec![0] }).collect(),
        TopologyKind::Complete => (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        TopologyKind::Custom => {
            return Err(Error::Config("custom topologies need explicit neighbor lists".into()));
        }
    };
    Ok(Topology { kind, neighbors })
}

/// The `k` fittest members of `pop`, best first; equal fitness keeps the
/// older (lower-index) member first.
pub fn select_fittest<T: Clone>(pop: &[T], fitness: &[f64], k: usize) -> Result<Vec<T>> {
    if pop.len() != fitness.len() {
        return Err(Error::Shape(format!("{} individuals but {} fitness values", pop.len(), fitness.len())));
    }
    if k > pop.len() {
        return Err(Error::InvalidArgument(format!("cannot select {k} of {} individuals", pop.len())));
    }
    Ok(fittest_indices(fitness, k).into_iter().map(|i| pop[i].clone()).collect())
}

/// Synchronous exchange: every island receives copies of the `k_top`
/// fittest trees and perturbations of each neighbor, all taken from the
/// pre-migration state.
pub fn migrate(islands: &mut [Island], topology: &Topology, k_top: usize) -> Result<()> {
    if k_top == 0 {
        return Ok(());
    }
    if topology.num_islands() != islands.len() {
        return Err(Error::Config(format!(
            "topology covers {} islands but {} exist",
            topology.num_islands(),
            islands.len()
        )));
    }
    let outgoing: Vec<(Vec<DecisionTree>, Vec<_>)> = islands
        .iter_mut()
        .map(|isl| {
            let trees = isl.fittest_trees(k_top).into_iter().map(|(t, _)| t).collect();
            (trees, isl.fittest_perturbations(k_top))
        })
        .collect();
    for (i, isl) in islands.iter_mut().enumerate() {
        let mut trees = Vec::new();
        let mut perts = Vec::new();
        for &j in topology.neighbors(i) {
            trees.extend(outgoing[j].0.iter().cloned());
            perts.extend(outgoing[j].1.iter().cloned());
        }
        isl.receive_migrants(trees, perts)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchipelagoConfig {
    pub island: IslandParams,
    pub num_islands: usize,
    /// Individuals of each kind sent to every neighbor per migration (k_top).
    pub migration_size: usize,
    pub topology: TopologyKind,
    /// Neighbor lists for [`TopologyKind::Custom`].
    pub custom_neighbors: Option<Vec<Vec<usize>>>,
    /// Total tree generations per island (l_g).
    pub generation_limit: usize,
    /// Generations without global improvement before stopping (l_c).
    pub stagnation_limit: usize,
    pub seed: u64,
    /// Explicit per-island seeds; derived from `seed` when absent.
    pub island_seeds: Option<Vec<u64>>,
}

impl Default for ArchipelagoConfig {
    fn default() -> Self {
        Self {
            island: IslandParams::default(),
            num_islands: 10,
            migration_size: 5,
            topology: TopologyKind::Ring,
            custom_neighbors: None,
            generation_limit: 1000,
            stagnation_limit: 100,
            seed: 0,
            island_seeds: None,
        }
    }
}

impl ArchipelagoConfig {
    pub fn validate(&self) -> Result<()> {
        self.island.validate()?;
        if self.num_islands == 0 {
            return Err(Error::Config("at least one island is required".into()));
        }
        if self.generation_limit == 0 {
            return Err(Error::Config("generation_limit must be positive".into()));
        }
        if self.stagnation_limit == 0 {
            return Err(Error::Config("stagnation_limit must be positive".into()));
        }
        if let Some(seeds) = &self.island_seeds {
            if seeds.len() != self.num_islands {
                return Err(Error::Config(format!("{} island seeds for {} islands", seeds.len(), self.num_islands)));
            }
        }
        self.topology().map(|_| ())
    }

    pub fn island_seed(&self, index: usize) -> u64 {
        match &self.island_seeds {
            Some(seeds) => seeds[index],
            None => derive_seed(self.seed, index as u64),
        }
    }

    /// The migration graph. A single island has no neighbors.
    pub fn topology(&self) -> Result<Topology> {
        match (self.topology, &self.custom_neighbors) {
            (TopologyKind::Custom, Some(lists)) => {
                let t = Topology::custom(lists.clone())?;
                if t.num_islands() != self.num_islands {
                    return Err(Error::Config(format!(
                        "custom topology lists {} islands, config has {}",
                        t.num_islands(),
                        self.num_islands
                    )));
                }
                Ok(t)
            }
            (_, _) if self.num_islands == 1 => Ok(Topology::isolated(1)),
            (kind, _) => build_topology(kind, self.num_islands),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StopReason {
    GenerationLimit,
    Stagnation,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GenerationLimit => "generation-limit",
            Self::Stagnation => "stagnation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchipelagoResult {
    pub islands: Vec<Island>,
    /// Champion and fitness of every island, by island id.
    pub best_tree_per_island: Vec<(DecisionTree, f64)>,
    pub global_best_tree: DecisionTree,
    pub global_best_fitness: f64,
    pub global_best_island: usize,
    pub total_generations: usize,
    pub stop_reason: StopReason,
    /// Historical best fitness across all islands after every generation.
    pub global_best_history: Vec<(usize, f64)>,
}

/// Runs one epoch on every island. Implementations may run islands in
/// parallel; islands never share state during an epoch.
pub trait EpochExecutor {
    fn run_epochs(&self, islands: &mut [Island], generations: usize);
}

/// Islands one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl EpochExecutor for Sequential {
    fn run_epochs(&self, islands: &mut [Island], generations: usize) {
        for isl in islands {
            isl.run_generations(generations);
        }
    }
}

/// Snapshot handed to run observers after every epoch, before migration.
#[derive(Debug)]
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub total_generations: usize,
    pub islands: &'a [Island],
    pub global_best_fitness: f64,
}

/// Builds the islands; `injected` trees seed island 0.
pub fn init_islands(dataset: &Arc<Dataset>, config: &ArchipelagoConfig, injected: &[DecisionTree]) -> Result<Vec<Island>> {
    config.validate()?;
    (0..config.num_islands)
        .map(|i| {
            let inject = if i == 0 { injected } else { &[] };
            Island::init(i, dataset.clone(), &config.island, config.island_seed(i), inject)
        })
        .collect()
}

/// Sequential run without external trees.
pub fn run(dataset: Arc<Dataset>, config: &ArchipelagoConfig) -> Result<ArchipelagoResult> {
    run_with(dataset, config, &[], &Sequential, &mut |_| {})
}

/// Epochs until the generation limit or stagnation, migrating in between.
pub fn run_with(
    dataset: Arc<Dataset>,
    config: &ArchipelagoConfig,
    injected: &[DecisionTree],
    executor: &dyn EpochExecutor,
    observer: &mut dyn FnMut(&EpochReport<'_>),
) -> Result<ArchipelagoResult> {
    let topology = config.topology()?;
    let mut islands = init_islands(&dataset, config, injected)?;
    let mut total = 0;
    let mut best = f64::NEG_INFINITY;
    let mut last_improvement = 0;
    let mut history = Vec::new();
    let mut epoch = 0;
    let stop_reason = loop {
        let generations = config.island.epoch_generations.min(config.generation_limit - total);
        executor.run_epochs(&mut islands, generations);
        for g in total..total + generations {
            let gen_best = islands
                .iter()
                .map(|isl| isl.history()[g].1)
                .fold(f64::NEG_INFINITY, f64::max);
            if gen_best > best + IMPROVEMENT_TOLERANCE || best == f64::NEG_INFINITY {
                best = best.max(gen_best);
                last_improvement = g + 1;
            }
            history.push((g + 1, best));
        }
        total += generations;
        epoch += 1;
        observer(&EpochReport { epoch, total_generations: total, islands: &islands, global_best_fitness: best });
        if total >= config.generation_limit {
            break StopReason::GenerationLimit;
        }
        if total - last_improvement >= config.stagnation_limit {
            break StopReason::Stagnation;
        }
        migrate(&mut islands, &topology, config.migration_size)?;
    };
    let best_tree_per_island: Vec<(DecisionTree, f64)> = islands.iter_mut().map(Island::champion).collect();
    let mut global = 0;
    for (i, (_, f)) in best_tree_per_island.iter().enumerate() {
        if *f > best_tree_per_island[global].1 {
            global = i;
        }
    }
    log::info!("stopped after {total} generations: {}", stop_reason.as_str());
    Ok(ArchipelagoResult {
        global_best_tree: best_tree_per_island[global].0.clone(),
        global_best_fitness: best_tree_per_island[global].1,
        global_best_island: global,
        best_tree_per_island,
        islands,
        total_generations: total,
        stop_reason,
        global_best_history: history,
    })
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
