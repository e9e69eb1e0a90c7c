//! One island: a tree population and a perturbation population evolving
//! against each other, plus a Hall of Fame holding the mixed equilibrium of
//! their best members.
//!
//! Fitness is cached per individual and dropped whenever the opposing side
//! changes. Within a block of tree generations the perturbation population
//! and the Hall of Fame are fixed, so surviving trees keep their fitness;
//! the same holds for perturbations within a perturbation block, whose
//! target trees are fixed at the start of the block.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{bootstrap_sample, BootstrapView, Dataset};
use crate::error::{Error, Result};
use crate::game::{self, MixedStrategyPair, PayoffMatrix};
use crate::matrix::Matrix;
use crate::metrics::{correct_count, reference_accuracy_on, CartParams, MetricKind};
use crate::perturbation::{
    crossover_perturbations, mutate_perturbation, sample_uniform, Perturbation,
};
use crate::rng::{seeded, IslandRng};
use crate::tree::{crossover_trees, mutate_tree, random_tree, DecisionTree, TreeSpace};

/// Per-island evolutionary parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IslandParams {
    /// N_T
    pub tree_population: usize,
    /// N_P
    pub perturbation_population: usize,
    /// Consecutive generations of one population before switching (n_p).
    pub block_generations: usize,
    /// Tree generations per epoch, i.e. between migrations (n_g).
    pub epoch_generations: usize,
    /// Number of fittest trees a perturbation is evaluated against (N_top).
    pub top_trees: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Probability that the fitter individual wins a binary tournament.
    pub selection_pressure: f64,
    pub elite: usize,
    /// Total number of individuals the Hall of Fame may hold (N_HoF).
    pub hof_size: usize,
    pub epsilon: f64,
    pub metric: MetricKind,
    pub max_depth: usize,
    pub init_depth: usize,
    pub leaf_prob: f64,
    pub cart: CartParams,
    /// Train every island on the full dataset instead of a bootstrap sample.
    pub same_input: bool,
    pub max_payoff_rows: usize,
    pub max_payoff_cols: usize,
}

impl Default for IslandParams {
    fn default() -> Self {
        Self {
            tree_population: 200,
            perturbation_population: 500,
            block_generations: 20,
            epoch_generations: 40,
            top_trees: 20,
            crossover_prob: 0.8,
            mutation_prob: 0.5,
            selection_pressure: 0.9,
            elite: 2,
            hof_size: 200,
            epsilon: 0.1,
            metric: MetricKind::AdversarialAccuracy,
            max_depth: 10,
            init_depth: 3,
            leaf_prob: 0.3,
            cart: CartParams::default(),
            same_input: false,
            max_payoff_rows: 200,
            max_payoff_cols: 1000,
        }
    }
}

impl IslandParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.tree_population < 1 || self.perturbation_population < 1 {
            return fail("population sizes must be at least 1".into());
        }
        if self.elite > self.tree_population || self.elite > self.perturbation_population {
            return fail(format!("elite size {} exceeds a population size", self.elite));
        }
        if self.block_generations == 0 || self.epoch_generations == 0 {
            return fail("generation counts must be positive".into());
        }
        if self.top_trees == 0 {
            return fail("top_trees must be positive".into());
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
            ("selection_pressure", self.selection_pressure),
            ("leaf_prob", self.leaf_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.hof_size < 2 {
            return fail("hof_size must hold at least one tree and one perturbation".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon {} must be finite and >= 0", self.epsilon));
        }
        if self.max_payoff_rows == 0 || self.max_payoff_cols == 0 {
            return fail("payoff caps must be positive".into());
        }
        if self.init_depth > self.max_depth {
            return fail("init_depth exceeds max_depth".into());
        }
        Ok(())
    }

    pub fn tree_space(&self, num_features: usize, num_classes: usize) -> TreeSpace {
        TreeSpace {
            num_features,
            num_classes,
            max_depth: self.max_depth,
            init_depth: self.init_depth,
            leaf_prob: self.leaf_prob,
        }
    }
}

/// Mixed equilibrium over the strongest trees and perturbations seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct HallOfFame {
    pub trees: Vec<(DecisionTree, f64)>,
    pub perturbations: Vec<(Perturbation, f64)>,
    pub capacity: usize,
}

impl HallOfFame {
    pub fn len(&self) -> usize {
        self.trees.len() + self.perturbations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Both mixtures are probability distributions within `1e-9` and the
    /// archive respects its capacity.
    pub fn is_valid(&self) -> bool {
        let ok = |probs: &mut dyn Iterator<Item = f64>| {
            let mut sum = 0.0;
            let mut any = false;
            for p in probs {
                if p < 0.0 {
                    return false;
                }
                sum += p;
                any = true;
            }
            any && (sum - 1.0).abs() <= 1e-9
        };
        ok(&mut self.trees.iter().map(|t| t.1))
            && ok(&mut self.perturbations.iter().map(|p| p.1))
            && self.len() <= self.capacity
    }

    /// Drops lowest-probability members until the archive fits, keeping at
    /// least one member per side, then renormalizes.
    fn truncate(&mut self) {
        while self.len() > self.capacity {
            let tree_min = (self.trees.len() > 1)
                .then(|| lowest(self.trees.iter().map(|t| t.1)))
                .flatten();
            let pert_min = (self.perturbations.len() > 1)
                .then(|| lowest(self.perturbations.iter().map(|p| p.1)))
                .flatten();
            match (tree_min, pert_min) {
                (Some((i, a)), Some((_, b))) if a <= b => {
                    self.trees.remove(i);
                }
                (_, Some((j, _))) => {
                    self.perturbations.remove(j);
                }
                (Some((i, _)), None) => {
                    self.trees.remove(i);
                }
                (None, None) => break,
            }
        }
        renormalize(self.trees.iter_mut().map(|t| &mut t.1));
        renormalize(self.perturbations.iter_mut().map(|p| &mut p.1));
    }
}

/// Index and value of the smallest entry; later entries win ties so that
/// older members survive.
fn lowest(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    values.enumerate().fold(None, |best, (i, v)| match best {
        Some((_, b)) if v > b => best,
        _ => Some((i, v)),
    })
}

fn renormalize<'a>(probs: impl Iterator<Item = &'a mut f64>) {
    let mut probs: Vec<&mut f64> = probs.collect();
    let total: f64 = probs.iter().map(|p| **p).sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|p| **p /= total);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TreeMember {
    tree: DecisionTree,
    fitness: Option<f64>,
}

impl TreeMember {
    fn new(tree: DecisionTree) -> Self {
        Self { tree, fitness: None }
    }
}

/// A perturbation together with its effect on this island's training view.
#[derive(Debug, Clone, PartialEq)]
struct PertMember {
    pert: Perturbation,
    applied: Matrix,
    fitness: Option<f64>,
}

/// Result of the most recent Hall of Fame update, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct HofGame {
    pub payoff: PayoffMatrix,
    pub equilibrium: MixedStrategyPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Island {
    id: usize,
    params: IslandParams,
    space: TreeSpace,
    view: BootstrapView,
    rng: IslandRng,
    trees: Vec<TreeMember>,
    perts: Vec<PertMember>,
    hof: HallOfFame,
    hof_applied: Vec<Matrix>,
    /// Trees perturbations are scored against during the current block.
    targets: Option<Vec<DecisionTree>>,
    history: Vec<(usize, f64)>,
    generation: usize,
    perturbation_generation: usize,
    last_hof_game: Option<HofGame>,
}

impl Island {
    /// Random initial island. `injected` trees replace the first random ones.
    pub fn init(
        id: usize,
        dataset: Arc<Dataset>,
        params: &IslandParams,
        seed: u64,
        injected: &[DecisionTree],
    ) -> Result<Self> {
        params.validate()?;
        dataset.validate()?;
        let mut rng = seeded(seed);
        let view = if params.same_input {
            BootstrapView::identity(dataset.clone())
        } else {
            bootstrap_sample(dataset.clone(), &mut rng)
        };
        let space = params.tree_space(dataset.num_features(), dataset.num_classes);
        let trees: Vec<DecisionTree> = (0..params.tree_population)
            .map(|_| random_tree(params.init_depth, &space, &mut rng))
            .collect();
        let (m, d) = (view.len(), view.num_features());
        let perts: Vec<Perturbation> = (0..params.perturbation_population)
            .map(|_| sample_uniform(m, d, params.epsilon, &mut rng))
            .collect();
        let mut island = Self::with_populations(id, view, trees, perts, params, rng)?;
        island.inject_trees(injected)?;
        Ok(island)
    }

    /// Island over explicit populations. The Hall of Fame starts as the
    /// zero perturbation and the fittest tree against it and `perts`.
    pub fn with_populations(
        id: usize,
        view: BootstrapView,
        trees: Vec<DecisionTree>,
        perts: Vec<Perturbation>,
        params: &IslandParams,
        rng: IslandRng,
    ) -> Result<Self> {
        params.validate()?;
        if trees.is_empty() || perts.is_empty() {
            return Err(Error::Empty("island populations"));
        }
        let source = view.source().clone();
        let space = params.tree_space(source.num_features(), source.num_classes);
        for t in &trees {
            t.validate(space.num_features, space.num_classes, space.max_depth)?;
        }
        let mut island = Self {
            id,
            params: params.clone(),
            space,
            hof: HallOfFame { trees: Vec::new(), perturbations: Vec::new(), capacity: params.hof_size },
            hof_applied: Vec::new(),
            trees: trees.into_iter().map(TreeMember::new).collect(),
            perts: Vec::new(),
            targets: None,
            history: Vec::new(),
            generation: 0,
            perturbation_generation: 0,
            last_hof_game: None,
            rng,
            view,
        };
        island.perts = perts
            .into_iter()
            .map(|p| island.admit(p))
            .collect::<Result<_>>()?;
        let zero = Perturbation::zero(island.view.len(), island.view.num_features(), params.epsilon);
        let zero = island.admit(zero)?;
        island.hof_applied = vec![zero.applied];
        island.hof.perturbations = vec![(zero.pert, 1.0)];
        island.reset_hof_tree();
        Ok(island)
    }

    fn reset_hof_tree(&mut self) {
        self.evaluate_trees();
        let best = self.fittest_tree_indices(1)[0];
        self.hof.trees = vec![(self.trees[best].tree.clone(), 1.0)];
    }

    /// Replaces the lowest-index trees of a freshly initialized island.
    pub fn inject_trees(&mut self, trees: &[DecisionTree]) -> Result<()> {
        if trees.is_empty() {
            return Ok(());
        }
        if self.generation > 0 {
            return Err(Error::InvalidArgument("trees can only be injected before evolution".into()));
        }
        if trees.len() > self.trees.len() {
            return Err(Error::InvalidArgument(format!(
                "{} injected trees exceed the population of {}",
                trees.len(),
                self.trees.len()
            )));
        }
        for t in trees {
            t.validate(self.space.num_features, self.space.num_classes, self.space.max_depth)?;
        }
        for (slot, t) in self.trees.iter_mut().zip(trees) {
            *slot = TreeMember::new(t.clone());
        }
        self.invalidate_perturbation_fitness();
        self.reset_hof_tree();
        Ok(())
    }

    /// Wraps a perturbation with its applied matrix and, for max regret, its
    /// reference accuracy on this island's view.
    fn admit(&self, mut pert: Perturbation) -> Result<PertMember> {
        let applied = pert.apply(&self.view)?;
        if self.params.metric == MetricKind::MaxRegret && pert.cached_reference_accuracy().is_none() {
            let reference = reference_accuracy_on(&applied, self.view.labels(), &self.params.cart)?;
            pert.set_reference_accuracy(reference)?;
        }
        Ok(PertMember { pert, applied, fitness: None })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params(&self) -> &IslandParams {
        &self.params
    }

    pub fn view(&self) -> &BootstrapView {
        &self.view
    }

    pub fn hof(&self) -> &HallOfFame {
        &self.hof
    }

    pub fn last_hof_game(&self) -> Option<&HofGame> {
        self.last_hof_game.as_ref()
    }

    /// Tree generations completed so far.
    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn perturbation_generation(&self) -> usize {
        self.perturbation_generation
    }

    /// `(generation, best tree fitness)` after every tree generation.
    pub fn history(&self) -> &[(usize, f64)] {
        &self.history
    }

    pub fn trees(&self) -> impl ExactSizeIterator<Item = &DecisionTree> + '_ {
        self.trees.iter().map(|m| &m.tree)
    }

    pub fn perturbations(&self) -> impl ExactSizeIterator<Item = &Perturbation> + '_ {
        self.perts.iter().map(|m| &m.pert)
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn perturbation_count(&self) -> usize {
        self.perts.len()
    }

    /// Cached tree fitness, `None` where stale.
    pub fn tree_fitness(&self) -> Vec<Option<f64>> {
        self.trees.iter().map(|m| m.fitness).collect()
    }

    pub fn perturbation_fitness(&self) -> Vec<Option<f64>> {
        self.perts.iter().map(|m| m.fitness).collect()
    }

    fn payoff_against(&self, tree: &DecisionTree, applied: &Matrix, pert: &Perturbation) -> f64 {
        let labels = self.view.labels();
        let acc = correct_count(tree, applied, labels) as f64 / labels.len() as f64;
        match self.params.metric {
            MetricKind::AdversarialAccuracy => acc,
            MetricKind::MaxRegret => {
                -(pert.cached_reference_accuracy().expect("admitted perturbations carry a reference") - acc)
            }
        }
    }

    /// Payoff of `tree` against the perturbation at `index` of the current
    /// population, measured on this island's view.
    pub fn payoff_against_member(&self, tree: &DecisionTree, index: usize) -> f64 {
        let p = &self.perts[index];
        self.payoff_against(tree, &p.applied, &p.pert)
    }

    /// Tree payoff against the worst current perturbation or the Hall of
    /// Fame mixture, whichever is lower. Higher is fitter.
    pub fn fitness_tree(&self, tree: &DecisionTree) -> f64 {
        let worst = self
            .perts
            .iter()
            .map(|p| self.payoff_against(tree, &p.applied, &p.pert))
            .fold(f64::INFINITY, f64::min);
        let expected: f64 = self
            .hof
            .perturbations
            .iter()
            .zip(&self.hof_applied)
            .map(|((p, w), z)| w * self.payoff_against(tree, z, p))
            .sum();
        worst.min(expected)
    }

    /// Mean payoff lost by `targets` against `pert`; higher is fitter for
    /// the adversary.
    fn perturbation_score(&self, targets: &[DecisionTree], applied: &Matrix, pert: &Perturbation) -> f64 {
        let total: f64 = targets.iter().map(|t| self.payoff_against(t, applied, pert)).sum();
        -total / targets.len() as f64
    }

    /// Adversary fitness against the `top_trees` currently fittest trees.
    pub fn fitness_perturbation(&mut self, pert: &Perturbation) -> Result<f64> {
        let member = self.admit(pert.clone())?;
        let targets = self.current_targets();
        Ok(self.perturbation_score(&targets, &member.applied, &member.pert))
    }

    fn current_targets(&mut self) -> Vec<DecisionTree> {
        if let Some(t) = &self.targets {
            return t.clone();
        }
        self.evaluate_trees();
        let targets: Vec<DecisionTree> = self
            .fittest_tree_indices(self.params.top_trees.min(self.trees.len()))
            .into_iter()
            .map(|i| self.trees[i].tree.clone())
            .collect();
        self.targets = Some(targets.clone());
        targets
    }

    fn evaluate_trees(&mut self) {
        for k in 0..self.trees.len() {
            if self.trees[k].fitness.is_none() {
                let f = self.fitness_tree(&self.trees[k].tree);
                self.trees[k].fitness = Some(f);
            }
        }
    }

    fn evaluate_perturbations(&mut self) {
        let targets = self.current_targets();
        for k in 0..self.perts.len() {
            if self.perts[k].fitness.is_none() {
                let f = self.perturbation_score(&targets, &self.perts[k].applied, &self.perts[k].pert);
                self.perts[k].fitness = Some(f);
            }
        }
    }

    /// Brings every cached fitness up to date.
    pub fn refresh_fitness(&mut self) {
        self.evaluate_trees();
        self.evaluate_perturbations();
    }

    fn invalidate_tree_fitness(&mut self) {
        self.trees.iter_mut().for_each(|m| m.fitness = None);
        self.invalidate_perturbation_fitness();
    }

    fn invalidate_perturbation_fitness(&mut self) {
        self.targets = None;
        self.perts.iter_mut().for_each(|m| m.fitness = None);
    }

    fn fittest_tree_indices(&self, k: usize) -> Vec<usize> {
        let fitness: Vec<f64> = self.trees.iter().map(|m| m.fitness.expect("evaluated")).collect();
        fittest_indices(&fitness, k)
    }

    /// Copies of the `k` fittest trees with their fitness.
    pub fn fittest_trees(&mut self, k: usize) -> Vec<(DecisionTree, f64)> {
        self.evaluate_trees();
        self.fittest_tree_indices(k.min(self.trees.len()))
            .into_iter()
            .map(|i| (self.trees[i].tree.clone(), self.trees[i].fitness.expect("evaluated")))
            .collect()
    }

    /// Copies of the `k` fittest perturbations.
    pub fn fittest_perturbations(&mut self, k: usize) -> Vec<Perturbation> {
        self.evaluate_perturbations();
        let fitness: Vec<f64> = self.perts.iter().map(|m| m.fitness.expect("evaluated")).collect();
        fittest_indices(&fitness, k.min(self.perts.len()))
            .into_iter()
            .map(|i| self.perts[i].pert.clone())
            .collect()
    }

    /// Appends migrants. They compete in the next selection step, which
    /// restores the population sizes.
    pub fn receive_migrants(&mut self, trees: Vec<DecisionTree>, perts: Vec<Perturbation>) -> Result<()> {
        for t in trees {
            t.validate(self.space.num_features, self.space.num_classes, self.space.max_depth)?;
            self.trees.push(TreeMember::new(t));
        }
        if !perts.is_empty() {
            for mut p in perts {
                // the reference accuracy belongs to the donor's view
                p.clear_reference_accuracy();
                let member = self.admit(p)?;
                self.perts.push(member);
            }
            self.invalidate_tree_fitness();
        } else {
            self.invalidate_perturbation_fitness();
        }
        Ok(())
    }

    /// Crossover, mutation, evaluation and elitist binary-tournament
    /// selection over the joint pool of parents and offspring.
    pub fn evolve_tree_generation(&mut self) {
        let mut pool = core::mem::take(&mut self.trees);
        let n = pool.len();
        for _ in 0..n / 2 {
            let i = self.rng.random_range(0..n);
            let j = self.rng.random_range(0..n);
            if self.rng.random_bool(self.params.crossover_prob) {
                let (a, b) = crossover_trees(&pool[i].tree, &pool[j].tree, &self.space, &mut self.rng);
                pool.push(TreeMember::new(a));
                pool.push(TreeMember::new(b));
            }
        }
        for k in 0..pool.len() {
            if self.rng.random_bool(self.params.mutation_prob) {
                let child = mutate_tree(&pool[k].tree, &self.space, &mut self.rng);
                pool.push(TreeMember::new(child));
            }
        }
        for member in pool.iter_mut() {
            if member.fitness.is_none() {
                member.fitness = Some(self.fitness_tree(&member.tree));
            }
        }
        let fitness: Vec<f64> = pool.iter().map(|m| m.fitness.expect("evaluated")).collect();
        let chosen = select(&fitness, self.params.tree_population, self.params.elite, self.params.selection_pressure, &mut self.rng);
        self.trees = chosen.into_iter().map(|i| pool[i].clone()).collect();
        self.generation += 1;
        let best = self.trees.iter().map(|m| m.fitness.expect("evaluated")).fold(f64::NEG_INFINITY, f64::max);
        self.history.push((self.generation, best));
        log::debug!(
            "island={} gen={} best_fitness={} hof_size={}",
            self.id,
            self.generation,
            best,
            self.hof.len()
        );
        self.invalidate_perturbation_fitness();
    }

    /// The same pipeline on the perturbation population.
    pub fn evolve_perturbation_generation(&mut self) {
        let targets = self.current_targets();
        let mut pool = core::mem::take(&mut self.perts);
        let n = pool.len();
        for _ in 0..n / 2 {
            let i = self.rng.random_range(0..n);
            let j = self.rng.random_range(0..n);
            if self.rng.random_bool(self.params.crossover_prob) {
                let (a, b) = crossover_perturbations(&pool[i].pert, &pool[j].pert, &mut self.rng)
                    .expect("island perturbations share shape and epsilon");
                pool.push(self.admit(a).expect("shape checked"));
                pool.push(self.admit(b).expect("shape checked"));
            }
        }
        for k in 0..pool.len() {
            if self.rng.random_bool(self.params.mutation_prob) {
                let child = mutate_perturbation(&pool[k].pert, &mut self.rng);
                pool.push(self.admit(child).expect("shape checked"));
            }
        }
        for member in pool.iter_mut() {
            if member.fitness.is_none() {
                member.fitness = Some(self.perturbation_score(&targets, &member.applied, &member.pert));
            }
        }
        let fitness: Vec<f64> = pool.iter().map(|m| m.fitness.expect("evaluated")).collect();
        let chosen = select(
            &fitness,
            self.params.perturbation_population,
            self.params.elite,
            self.params.selection_pressure,
            &mut self.rng,
        );
        self.perts = chosen.into_iter().map(|i| pool[i].clone()).collect();
        self.perturbation_generation += 1;
        // trees now face a different adversary
        self.trees.iter_mut().for_each(|m| m.fitness = None);
    }

    /// Solves the game between the strongest trees and perturbations of the
    /// populations and the current archive, and stores the equilibrium
    /// support as the new Hall of Fame. On solver failure the previous Hall
    /// of Fame is kept.
    pub fn update_hof(&mut self) {
        self.evaluate_trees();
        // candidate trees: population first, then archive members not already present
        let mut tree_candidates: Vec<(DecisionTree, f64)> =
            self.trees.iter().map(|m| (m.tree.clone(), m.fitness.expect("evaluated"))).collect();
        for (t, _) in &self.hof.trees {
            if !tree_candidates.iter().any(|(c, _)| c == t) {
                let f = self.fitness_tree(t);
                tree_candidates.push((t.clone(), f));
            }
        }
        let mut unique_trees: Vec<(DecisionTree, f64)> = Vec::new();
        for c in tree_candidates {
            if !unique_trees.iter().any(|(u, _)| *u == c.0) {
                unique_trees.push(c);
            }
        }
        let k_rows = self.params.top_trees.min(self.params.max_payoff_rows).min(unique_trees.len());
        let fitness: Vec<f64> = unique_trees.iter().map(|c| c.1).collect();
        let rows: Vec<DecisionTree> =
            fittest_indices(&fitness, k_rows).into_iter().map(|i| unique_trees[i].0.clone()).collect();

        let mut pert_candidates: Vec<(Perturbation, Matrix)> =
            self.perts.iter().map(|m| (m.pert.clone(), m.applied.clone())).collect();
        for ((p, _), z) in self.hof.perturbations.iter().zip(&self.hof_applied) {
            if !pert_candidates.iter().any(|(c, _)| c.same_deltas(p)) {
                pert_candidates.push((p.clone(), z.clone()));
            }
        }
        let mut unique_perts: Vec<(Perturbation, Matrix)> = Vec::new();
        for c in pert_candidates {
            if !unique_perts.iter().any(|(u, _)| u.same_deltas(&c.0)) {
                unique_perts.push(c);
            }
        }
        let scores: Vec<f64> =
            unique_perts.iter().map(|(p, z)| self.perturbation_score(&rows, z, p)).collect();
        let k_cols = (2 * self.params.top_trees).min(self.params.max_payoff_cols).min(unique_perts.len());
        let cols: Vec<usize> = fittest_indices(&scores, k_cols);

        let mut entries = Matrix::zeros(rows.len(), cols.len());
        for (i, t) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                let (p, z) = &unique_perts[c];
                entries.set(i, j, self.payoff_against(t, z, p));
            }
        }
        let solved = PayoffMatrix::new(entries).and_then(|payoff| {
            let (eq, _) = game::solve(&payoff)?;
            Ok((payoff, eq))
        });
        match solved {
            Ok((payoff, eq)) => {
                let mut hof = HallOfFame {
                    trees: Vec::new(),
                    perturbations: Vec::new(),
                    capacity: self.params.hof_size,
                };
                for (t, &p) in rows.iter().zip(&eq.row_probs) {
                    if p > 0.0 {
                        hof.trees.push((t.clone(), p));
                    }
                }
                for (&c, &q) in cols.iter().zip(&eq.col_probs) {
                    if q > 0.0 {
                        hof.perturbations.push((unique_perts[c].0.clone(), q));
                    }
                }
                renormalize(hof.trees.iter_mut().map(|t| &mut t.1));
                renormalize(hof.perturbations.iter_mut().map(|p| &mut p.1));
                hof.truncate();
                self.hof_applied = hof
                    .perturbations
                    .iter()
                    .map(|(p, _)| {
                        let c = cols.iter().find(|&&c| unique_perts[c].0.same_deltas(p));
                        unique_perts[*c.expect("kept columns come from the game")].1.clone()
                    })
                    .collect();
                debug_assert!(hof.is_valid());
                self.hof = hof;
                self.last_hof_game = Some(HofGame { payoff, equilibrium: eq });
            }
            Err(e) => log::warn!("island={} hall of fame update failed: {e}", self.id),
        }
        self.invalidate_tree_fitness();
    }

    /// `epoch_generations` tree generations in alternating blocks with the
    /// perturbation population, each block pair followed by a Hall of Fame
    /// update. Ends with all fitness values current.
    pub fn run_epoch(&mut self) {
        self.run_generations(self.params.epoch_generations);
    }

    /// [`Island::run_epoch`] with an explicit number of tree generations.
    pub fn run_generations(&mut self, generations: usize) {
        let mut done = 0;
        while done < generations {
            let block = self.params.block_generations.min(generations - done);
            for _ in 0..block {
                self.evolve_tree_generation();
            }
            for _ in 0..block {
                self.evolve_perturbation_generation();
            }
            self.update_hof();
            done += block;
        }
        self.refresh_fitness();
        let best = self.trees.iter().map(|m| m.fitness.expect("evaluated")).fold(f64::NEG_INFINITY, f64::max);
        log::info!(
            "island={} gen={} best_fitness={} hof_size={}",
            self.id,
            self.generation,
            best,
            self.hof.len()
        );
    }

    /// The fittest tree in the current context, lowest index on ties.
    pub fn champion(&mut self) -> (DecisionTree, f64) {
        self.fittest_trees(1).remove(0)
    }
}

/// Indices of the `k` highest values; ties keep the earlier index first.
pub(crate) fn fittest_indices(fitness: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Elitism followed by binary tournaments with replacement: of two uniformly
/// drawn individuals the fitter (the first on ties) wins with probability
/// `pressure`.
fn select<R: Rng + ?Sized>(fitness: &[f64], size: usize, elite: usize, pressure: f64, rng: &mut R) -> Vec<usize> {
    let n = fitness.len();
    let mut chosen = fittest_indices(fitness, elite.min(size).min(n));
    while chosen.len() < size {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (fitter, other) = if fitness[a] >= fitness[b] { (a, b) } else { (b, a) };
        chosen.push(if rng.random_bool(pressure) { fitter } else { other });
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::diagonal;
    use crate::tree::TreeNode;

    fn small_params() -> IslandParams {
        IslandParams {
            tree_population: 12,
            perturbation_population: 16,
            block_generations: 2,
            epoch_generations: 4,
            top_trees: 4,
            hof_size: 10,
            epsilon: 0.05,
            ..IslandParams::default()
        }
    }

    fn island(seed: u64) -> Island {
        Island::init(0, diagonal(40, 7), &small_params(), seed, &[]).unwrap()
    }

    /// Diagonal boundary approximated by a staircase; good but not perfect.
    fn staircase() -> DecisionTree {
        DecisionTree {
            root: TreeNode::split(
                0,
                0.5,
                TreeNode::split(1, 0.75, TreeNode::leaf(0), TreeNode::leaf(1)),
                TreeNode::split(1, 0.25, TreeNode::leaf(0), TreeNode::leaf(1)),
            ),
        }
    }

    #[test]
    fn init_sizes_and_hof() {
        let isl = island(1);
        assert_eq!(isl.tree_count(), 12);
        assert_eq!(isl.perturbation_count(), 16);
        assert!(isl.trees().all(|t| t.depth() <= 3));
        assert!(isl.perturbations().all(|p| p.epsilon() == 0.05 && p.rows() == 40 && p.cols() == 2));
        let hof = isl.hof();
        assert!(hof.is_valid());
        assert_eq!(hof.trees.len(), 1);
        assert_eq!(hof.perturbations.len(), 1);
        assert!(hof.perturbations[0].0.deltas().as_slice().iter().all(|&v| v == 0.0));
        let best = isl.trees().map(|t| isl.fitness_tree(t)).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(isl.fitness_tree(&hof.trees[0].0), best);
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(island(5), island(5));
        assert_ne!(island(5), island(6));
    }

    #[test]
    fn same_input_uses_identity_view() {
        let params = IslandParams { same_input: true, ..small_params() };
        let isl = Island::init(0, diagonal(40, 7), &params, 3, &[]).unwrap();
        assert_eq!(isl.view().indices(), (0..40).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn invalid_config_rejected() {
        for params in [
            IslandParams { elite: 20, ..small_params() },
            IslandParams { crossover_prob: 1.5, ..small_params() },
            IslandParams { epsilon: -0.1, ..small_params() },
            IslandParams { block_generations: 0, ..small_params() },
            IslandParams { hof_size: 1, ..small_params() },
        ] {
            assert!(matches!(Island::init(0, diagonal(10, 1), &params, 0, &[]), Err(Error::Config(_))));
        }
    }

    #[test]
    fn tree_fitness_bounds() {
        let isl = island(2);
        let perfect_on_clean = DecisionTree::leaf(0);
        let f = isl.fitness_tree(&perfect_on_clean);
        let clean = crate::metrics::accuracy(&perfect_on_clean, isl.view().instances(), isl.view().labels()).unwrap();
        assert!(f <= clean + 1e-12);

        // single-class data: a constant tree is always right
        let ds = diagonal(30, 4);
        let ones = Dataset::new("c", ds.feature_names.clone(), ds.instances.clone(), vec![1; 30], 2).unwrap();
        let isl = Island::init(0, Arc::new(ones), &small_params(), 9, &[]).unwrap();
        assert_eq!(isl.fitness_tree(&DecisionTree::leaf(1)), 1.0);
    }

    #[test]
    fn removing_a_perturbation_never_lowers_tree_fitness() {
        let mut isl = island(3);
        let t = staircase();
        for _ in 0..8 {
            let before = isl.fitness_tree(&t);
            isl.perts.pop();
            assert!(isl.fitness_tree(&t) >= before);
        }
    }

    #[test]
    fn perturbation_fitness_fixtures() {
        let ds = diagonal(30, 4);
        let params = IslandParams { top_trees: 2, epsilon: 0.0, ..small_params() };
        let zero = Perturbation::zero(30, 2, 0.0);

        // all-zero labels: the constant-0 trees are perfect, the constant-1 tree is useless
        let zeros = Dataset::new("z", ds.feature_names.clone(), ds.instances.clone(), vec![0; 30], 2).unwrap();
        let mut isl = Island::with_populations(
            0,
            BootstrapView::identity(Arc::new(zeros)),
            vec![DecisionTree::leaf(0), DecisionTree::leaf(0)],
            vec![zero.clone()],
            &params,
            seeded(0),
        )
        .unwrap();
        assert_eq!(isl.fitness_perturbation(&zero).unwrap(), -1.0);

        // a weak extra tree outside the top set changes nothing
        isl.trees.push(TreeMember::new(DecisionTree::leaf(1)));
        isl.invalidate_tree_fitness();
        assert_eq!(isl.fitness_perturbation(&zero).unwrap(), -1.0);

        // labels flipped relative to a tree that fits the originals exactly
        let flipped: Vec<usize> = ds.labels.iter().map(|&y| 1 - y).collect();
        let wrong = Dataset::new("w", ds.feature_names.clone(), ds.instances.clone(), flipped, 2).unwrap();
        let mut isl = Island::with_populations(
            0,
            BootstrapView::identity(Arc::new(wrong)),
            vec![exact_tree(&ds)],
            vec![zero.clone()],
            &params,
            seeded(0),
        )
        .unwrap();
        assert_eq!(isl.fitness_perturbation(&zero).unwrap(), 0.0);
    }

    /// A tree that is exactly right on `ds`, built by fitting CART to it.
    fn exact_tree(ds: &Dataset) -> DecisionTree {
        let cart = CartParams { max_depth: 10, min_leaf: 1 };
        let t = crate::metrics::train_cart(&ds.instances, &ds.labels, &cart).unwrap();
        assert_eq!(correct_count(&t, &ds.instances, &ds.labels), ds.len());
        t
    }

    #[test]
    fn degenerate_rates_keep_best() {
        let params = IslandParams { crossover_prob: 0.0, mutation_prob: 0.0, ..small_params() };
        let mut isl = Island::init(0, diagonal(40, 7), &params, 11, &[]).unwrap();
        isl.evaluate_trees();
        let best = isl.trees.iter().map(|m| m.fitness.unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let before: Vec<DecisionTree> = isl.trees().cloned().collect();
        isl.evolve_tree_generation();
        assert_eq!(isl.tree_count(), 12);
        assert!(isl.trees().all(|t| before.contains(t)));
        assert_eq!(isl.history().last().unwrap().1, best);
        assert_eq!(isl.generation(), 1);
    }

    #[test]
    fn frozen_context_gives_monotone_best() {
        for seed in 0..5 {
            let mut isl = island(seed);
            for _ in 0..10 {
                isl.evolve_tree_generation();
                assert_eq!(isl.tree_count(), 12);
            }
            let h = isl.history();
            assert!(h.windows(2).all(|w| w[1].1 >= w[0].1), "{h:?}");

            let mut best = f64::NEG_INFINITY;
            for _ in 0..10 {
                isl.evolve_perturbation_generation();
                assert_eq!(isl.perturbation_count(), 16);
                let b = isl.perts.iter().map(|m| m.fitness.unwrap()).fold(f64::NEG_INFINITY, f64::max);
                assert!(b >= best);
                best = b;
            }
        }
    }

    #[test]
    fn zero_epsilon_perturbations_stay_put() {
        let params = IslandParams { epsilon: 0.0, ..small_params() };
        let mut isl = Island::init(0, diagonal(20, 2), &params, 4, &[]).unwrap();
        for _ in 0..3 {
            isl.evolve_perturbation_generation();
        }
        assert_eq!(isl.perturbation_count(), 16);
        assert!(isl.perturbations().all(|p| p.deltas().as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn hof_single_pair() {
        let ds = diagonal(20, 1);
        let params = IslandParams { tree_population: 1, perturbation_population: 1, elite: 1, ..small_params() };
        let p = Perturbation::zero(20, 2, 0.05);
        let mut isl =
            Island::with_populations(0, BootstrapView::identity(ds), vec![staircase()], vec![p], &params, seeded(0))
                .unwrap();
        isl.update_hof();
        let hof = isl.hof();
        assert_eq!(hof.trees, vec![(staircase(), 1.0)]);
        assert_eq!(hof.perturbations.len(), 1);
        assert_eq!(hof.perturbations[0].1, 1.0);
    }

    #[test]
    fn hof_updates_verify_and_fit() {
        for seed in 0..4 {
            let params = IslandParams { hof_size: 3, ..small_params() };
            let mut isl = Island::init(0, diagonal(40, 7), &params, seed, &[]).unwrap();
            for _ in 0..3 {
                isl.run_epoch();
                let game = isl.last_hof_game().unwrap();
                assert!(game::verify_equilibrium(&game.payoff, &game.equilibrium, 1e-6));
                assert!(isl.hof().len() <= 3);
                assert!(isl.hof().is_valid());
                assert_eq!(isl.hof_applied.len(), isl.hof().perturbations.len());
            }
        }
    }

    #[test]
    fn hof_truncation_drops_lowest() {
        let mut hof = HallOfFame {
            trees: vec![(DecisionTree::leaf(0), 0.7), (DecisionTree::leaf(1), 0.3)],
            perturbations: vec![
                (Perturbation::zero(1, 1, 0.0), 0.5),
                (Perturbation::zero(1, 1, 0.1), 0.1),
                (Perturbation::zero(1, 1, 0.2), 0.4),
            ],
            capacity: 3,
        };
        hof.truncate();
        assert_eq!(hof.trees.len(), 1);
        assert_eq!(hof.trees[0].1, 1.0);
        assert_eq!(hof.perturbations.len(), 2);
        assert!((hof.perturbations[0].1 - 0.5 / 0.9).abs() < 1e-12);
        assert!(hof.is_valid());
    }

    #[test]
    fn epoch_accounting_and_determinism() {
        let params = IslandParams { block_generations: 20, epoch_generations: 40, ..small_params() };
        let mut a = Island::init(0, diagonal(30, 7), &params, 21, &[]).unwrap();
        let mut b = a.clone();
        a.run_epoch();
        b.run_epoch();
        assert_eq!(a.generation(), 40);
        assert_eq!(a.perturbation_generation(), 40);
        assert_eq!(a.history().len(), 40);
        assert_eq!(a, b);
        assert_eq!(a.tree_count(), 12);
        assert_eq!(a.perturbation_count(), 16);
        assert!(a.tree_fitness().iter().all(Option::is_some));
        assert!(a.perturbation_fitness().iter().all(Option::is_some));
    }

    #[test]
    fn uneven_blocks_cover_exact_generations() {
        let params = IslandParams { block_generations: 3, epoch_generations: 7, ..small_params() };
        let mut isl = Island::init(0, diagonal(20, 7), &params, 1, &[]).unwrap();
        isl.run_epoch();
        assert_eq!(isl.generation(), 7);
        assert_eq!(isl.perturbation_generation(), 7);
    }

    #[test]
    fn injection() {
        let ds = diagonal(40, 7);
        let mut isl = Island::init(0, ds.clone(), &small_params(), 1, &[staircase()]).unwrap();
        assert_eq!(isl.tree_count(), 12);
        assert_eq!(isl.trees().next().unwrap(), &staircase());
        isl.evaluate_trees();
        assert_eq!(isl.trees[0].fitness.unwrap(), isl.fitness_tree(&staircase()));

        let plain = Island::init(0, ds.clone(), &small_params(), 1, &[]).unwrap();
        let mut again = plain.clone();
        again.inject_trees(&[]).unwrap();
        assert_eq!(again, plain);

        let too_many = vec![staircase(); 13];
        assert!(Island::init(0, ds.clone(), &small_params(), 1, &too_many).is_err());
        let wrong_dim = DecisionTree::stump(5, 0.5, 0, 1);
        assert!(Island::init(0, ds.clone(), &small_params(), 1, &[wrong_dim]).is_err());
        isl.run_epoch();
        assert!(isl.inject_trees(&[staircase()]).is_err());
    }

    #[test]
    fn max_regret_metric_runs() {
        let params = IslandParams { metric: MetricKind::MaxRegret, ..small_params() };
        let mut isl = Island::init(0, diagonal(30, 7), &params, 2, &[]).unwrap();
        isl.run_epoch();
        let (_, f) = isl.champion();
        assert!((-1.0..=1e-12).contains(&f));
        assert!(isl.perturbations().all(|p| p.cached_reference_accuracy().is_some()));
    }

    #[test]
    fn migrants_are_trimmed() {
        let mut isl = island(8);
        let mut donor = island(9);
        let trees: Vec<DecisionTree> = donor.fittest_trees(3).into_iter().map(|t| t.0).collect();
        let perts = donor.fittest_perturbations(3);
        isl.receive_migrants(trees, perts).unwrap();
        assert_eq!(isl.tree_count(), 15);
        assert_eq!(isl.perturbation_count(), 19);
        isl.run_epoch();
        assert_eq!(isl.tree_count(), 12);
        assert_eq!(isl.perturbation_count(), 16);
    }

    #[test]
    fn fittest_indices_orders_ties_by_age() {
        assert_eq!(fittest_indices(&[0.5, 0.9, 0.5, 0.9], 3), vec![1, 3, 0]);
    }
}
