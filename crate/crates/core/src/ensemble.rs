//! Forests assembled from island champions and their weighted hard vote.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::archipelago::ArchipelagoResult;
use crate::error::{Error, Result};
use crate::game::{self, MixedStrategyPair, PayoffMatrix, SolverUsed};
use crate::matrix::Matrix;
use crate::metrics::{Classifier, MetricKind};
use crate::tree::DecisionTree;

/// Tolerance on the sum of member weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CompositionMethod {
    Nash,
    Equal,
    Single,
}

impl CompositionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nash => "nash",
            Self::Equal => "equal",
            Self::Single => "single",
        }
    }
}

impl FromStr for CompositionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nash" => Ok(Self::Nash),
            "equal" => Ok(Self::Equal),
            "single" => Ok(Self::Single),
            other => Err(Error::Config(format!("unknown composition method `{other}`"))),
        }
    }
}

impl fmt::Display for CompositionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestMetadata {
    pub dataset: String,
    pub metric: MetricKind,
    pub epsilon: f64,
    pub composition: CompositionMethod,
}

/// Weighted trees voting on a class.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    members: Vec<(DecisionTree, f64)>,
    num_classes: usize,
    pub metadata: ForestMetadata,
}

impl Forest {
    /// Checks that weights are nonnegative and sum to one, and that every
    /// leaf names a class below `num_classes`.
    pub fn new(members: Vec<(DecisionTree, f64)>, num_classes: usize, metadata: ForestMetadata) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("forest members"));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("forest needs at least one class".into()));
        }
        let mut total = 0.0;
        for (i, (tree, w)) in members.iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidArgument(format!("member {i} has weight {w}")));
            }
            if let Some(&c) = tree.leaf_classes().iter().find(|&&c| c >= num_classes) {
                return Err(Error::InvalidTree(format!("member {i} predicts class {c} of {num_classes}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidArgument(format!("member weights sum to {total}")));
        }
        Ok(Self { members, num_classes, metadata })
    }

    /// A forest of one tree with weight 1.
    pub fn single(tree: DecisionTree, num_classes: usize, metadata: ForestMetadata) -> Result<Self> {
        Self::new(alloc::vec![(tree, 1.0)], num_classes, metadata)
    }

    pub fn members(&self) -> &[(DecisionTree, f64)] {
        &self.members
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.members.iter().map(|m| m.1)
    }

    /// Members with positive weight, as written to model files.
    pub fn support(&self) -> impl Iterator<Item = &(DecisionTree, f64)> + '_ {
        self.members.iter().filter(|m| m.1 > 0.0)
    }

    /// Weighted vote; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut scores = alloc::vec![0.0; self.num_classes];
        for (tree, w) in &self.members {
            scores[tree.predict(x)] += w;
        }
        crate::tree::argmax_lowest(&scores)
    }
}

impl Classifier for Forest {
    fn predict(&self, x: &[f64]) -> usize {
        Forest::predict(self, x)
    }
}

pub fn predict_forest(forest: &Forest, x: &[f64]) -> usize {
    forest.predict(x)
}

fn metadata_for(result: &ArchipelagoResult, composition: CompositionMethod) -> Result<(ForestMetadata, usize)> {
    let first = result.islands.first().ok_or(Error::Empty("archipelago islands"))?;
    let source = first.view().source();
    let params = first.params();
    let metadata =
        ForestMetadata { dataset: source.name.clone(), metric: params.metric, epsilon: params.epsilon, composition };
    Ok((metadata, source.num_classes))
}

/// Every island champion with weight `1 / |I|`.
pub fn compose_equal(result: &ArchipelagoResult) -> Result<Forest> {
    let (metadata, classes) = metadata_for(result, CompositionMethod::Equal)?;
    let n = result.best_tree_per_island.len();
    if n == 0 {
        return Err(Error::Empty("island champions"));
    }
    let members = result.best_tree_per_island.iter().map(|(t, _)| (t.clone(), 1.0 / n as f64)).collect();
    Forest::new(members, classes, metadata)
}

/// The overall champion alone.
pub fn compose_single(result: &ArchipelagoResult) -> Result<Forest> {
    let (metadata, classes) = metadata_for(result, CompositionMethod::Single)?;
    Forest::single(result.global_best_tree.clone(), classes, metadata)
}

/// A Nash-weighted forest together with the game that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub forest: Forest,
    pub payoff: PayoffMatrix,
    /// `None` when solving failed and equal weights were used instead.
    pub equilibrium: Option<(MixedStrategyPair, SolverUsed)>,
}

/// Weights the island champions by the tree side of the equilibrium of
/// champions versus the pooled final perturbation populations. Each
/// perturbation is scored on the view of the island that evolved it; at
/// most `max_payoff_rows` champions and `max_payoff_cols` perturbations
/// (fittest first) enter the game.
pub fn compose_nash(result: &ArchipelagoResult) -> Result<Composition> {
    let (metadata, classes) = metadata_for(result, CompositionMethod::Nash)?;
    let params = result.islands[0].params();
    let champions: Vec<&(DecisionTree, f64)> = {
        let fitness: Vec<f64> = result.best_tree_per_island.iter().map(|t| t.1).collect();
        let keep = crate::island::fittest_indices(&fitness, params.max_payoff_rows.min(fitness.len()));
        let mut keep = keep;
        // original island order for the rows
        keep.sort_unstable();
        keep.into_iter().map(|i| &result.best_tree_per_island[i]).collect()
    };
    if champions.is_empty() {
        return Err(Error::Empty("island champions"));
    }

    // (island, member index, fitness) over all final perturbation populations
    let mut columns: Vec<(usize, usize, f64)> = Vec::new();
    for (i, isl) in result.islands.iter().enumerate() {
        for (j, f) in isl.perturbation_fitness().into_iter().enumerate() {
            columns.push((i, j, f.unwrap_or(f64::NEG_INFINITY)));
        }
    }
    let fitness: Vec<f64> = columns.iter().map(|c| c.2).collect();
    let chosen = crate::island::fittest_indices(&fitness, params.max_payoff_cols.min(columns.len()));
    if chosen.is_empty() {
        return Err(Error::Empty("perturbations"));
    }

    let mut entries = Matrix::zeros(champions.len(), chosen.len());
    for (r, (tree, _)) in champions.iter().enumerate() {
        for (c, &k) in chosen.iter().enumerate() {
            let (island, member, _) = columns[k];
            entries.set(r, c, result.islands[island].payoff_against_member(tree, member));
        }
    }
    let payoff = PayoffMatrix::new(entries)?;
    match game::solve(&payoff) {
        Ok((eq, solver)) => {
            let members = champions.iter().zip(&eq.row_probs).map(|((t, _), &w)| (t.clone(), w)).collect();
            let forest = Forest::new(members, classes, metadata)?;
            Ok(Composition { forest, payoff, equilibrium: Some((eq, solver)) })
        }
        Err(e) => {
            log::warn!("composition game could not be solved ({e}); using equal weights");
            let n = champions.len() as f64;
            let members = champions.iter().map(|(t, _)| (t.clone(), 1.0 / n)).collect();
            let forest = Forest::new(members, classes, ForestMetadata { composition: CompositionMethod::Equal, ..metadata })?;
            Ok(Composition { forest, payoff, equilibrium: None })
        }
    }
}

/// `instances` under the `per_island` fittest final perturbations of every
/// island, stacked. Perturbation rows are matched to instance rows
/// cyclically because each perturbation was evolved on its island's view.
pub fn diversity_evaluation_set(result: &ArchipelagoResult, instances: &Matrix, per_island: usize) -> Result<Matrix> {
    let d = instances.cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for isl in &result.islands {
        let fitness: Vec<f64> =
            isl.perturbation_fitness().into_iter().map(|f| f.unwrap_or(f64::NEG_INFINITY)).collect();
        let perts: Vec<_> = isl.perturbations().collect();
        for k in crate::island::fittest_indices(&fitness, per_island.min(perts.len())) {
            let deltas = perts[k].deltas();
            if deltas.cols() != d {
                return Err(Error::Shape(format!("perturbation has {} features, data has {d}", deltas.cols())));
            }
            for (r, x) in instances.iter_rows().enumerate() {
                let delta = deltas.row(r % deltas.rows());
                data.extend(x.iter().zip(delta).map(|(v, e)| (v + e).clamp(0.0, 1.0)));
                rows += 1;
            }
        }
    }
    Matrix::from_vec(rows, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archipelago::{run, ArchipelagoConfig};
    use crate::island::IslandParams;
    use crate::testutil::diagonal;
    use alloc::vec;

    fn meta() -> ForestMetadata {
        ForestMetadata {
            dataset: "t".into(),
            metric: MetricKind::AdversarialAccuracy,
            epsilon: 0.1,
            composition: CompositionMethod::Nash,
        }
    }

    fn config(num_islands: usize) -> ArchipelagoConfig {
        ArchipelagoConfig {
            island: IslandParams {
                tree_population: 10,
                perturbation_population: 12,
                block_generations: 2,
                epoch_generations: 4,
                top_trees: 3,
                hof_size: 8,
                epsilon: 0.05,
                ..IslandParams::default()
            },
            num_islands,
            migration_size: 1,
            generation_limit: 8,
            seed: 3,
            ..ArchipelagoConfig::default()
        }
    }

    #[test]
    fn voting_fixtures() {
        let one = Forest::single(DecisionTree::stump(0, 0.5, 0, 1), 2, meta()).unwrap();
        assert_eq!(predict_forest(&one, &[0.7]), 1);
        assert_eq!(predict_forest(&one, &[0.2]), 0);

        let weighted = Forest::new(vec![(DecisionTree::leaf(1), 0.6), (DecisionTree::leaf(0), 0.4)], 2, meta()).unwrap();
        assert_eq!(weighted.predict(&[0.0]), 1);
        let tied = Forest::new(vec![(DecisionTree::leaf(0), 0.5), (DecisionTree::leaf(1), 0.5)], 2, meta()).unwrap();
        assert_eq!(tied.predict(&[0.0]), 0);
        let tied = Forest::new(vec![(DecisionTree::leaf(1), 0.5), (DecisionTree::leaf(0), 0.5)], 2, meta()).unwrap();
        assert_eq!(tied.predict(&[0.0]), 0);
    }

    #[test]
    fn forest_validation() {
        assert!(Forest::new(vec![], 2, meta()).is_err());
        assert!(Forest::new(vec![(DecisionTree::leaf(0), 0.5)], 2, meta()).is_err());
        assert!(Forest::new(vec![(DecisionTree::leaf(0), 1.2), (DecisionTree::leaf(0), -0.2)], 2, meta()).is_err());
        assert!(Forest::new(vec![(DecisionTree::leaf(3), 1.0)], 2, meta()).is_err());
        let f = Forest::new(vec![(DecisionTree::leaf(0), 1.0), (DecisionTree::leaf(1), 0.0)], 2, meta()).unwrap();
        assert_eq!(f.support().count(), 1);
        assert_eq!(f.members().len(), 2);
    }

    #[test]
    fn equal_composition() {
        let r1 = run(diagonal(30, 1), &config(1)).unwrap();
        let f1 = compose_equal(&r1).unwrap();
        assert_eq!(f1.members().len(), 1);
        assert_eq!(f1.members()[0].1, 1.0);
        let r4 = run(diagonal(30, 1), &config(4)).unwrap();
        let f4 = compose_equal(&r4).unwrap();
        assert!(f4.weights().all(|w| w == 0.25));
        assert!((f4.weights().sum::<f64>() - 1.0).abs() <= WEIGHT_TOLERANCE);
        assert_eq!(f4.metadata.composition, CompositionMethod::Equal);
        assert_eq!(f4.num_classes(), 2);
    }

    #[test]
    fn nash_single_island() {
        let r = run(diagonal(30, 1), &config(1)).unwrap();
        let c = compose_nash(&r).unwrap();
        assert_eq!(c.forest.members().len(), 1);
        assert_eq!(c.forest.members()[0].1, 1.0);
    }

    #[test]
    fn nash_dominates_on_its_matrix() {
        for seed in 0..4 {
            let r = run(diagonal(30, seed), &ArchipelagoConfig { seed, ..config(4) }).unwrap();
            let c = compose_nash(&r).unwrap();
            let (eq, _) = c.equilibrium.as_ref().unwrap();
            assert!(game::verify_equilibrium(&c.payoff, eq, 1e-6));
            let weights: Vec<f64> = c.forest.weights().collect();
            let nash = c.payoff.guaranteed(&weights);
            let uniform = c.payoff.guaranteed(&[0.25; 4]);
            assert!(nash >= uniform - 1e-9);
            for row in 0..4 {
                let mut pure = vec![0.0; 4];
                pure[row] = 1.0;
                assert!(nash >= c.payoff.guaranteed(&pure) - 1e-9);
            }
            assert_eq!(c.payoff.cols(), 4 * 12);
        }
    }

    fn inverted(node: &crate::tree::TreeNode) -> crate::tree::TreeNode {
        use crate::tree::TreeNode;
        match node {
            TreeNode::Leaf { class } => TreeNode::leaf(1 - class),
            TreeNode::Split { feature, threshold, left, right } => {
                TreeNode::split(*feature, *threshold, inverted(left), inverted(right))
            }
        }
    }

    #[test]
    fn diversity_set_shape() {
        let r = run(diagonal(30, 1), &config(2)).unwrap();
        let test = diagonal(7, 9);
        let z = diversity_evaluation_set(&r, &test.instances, 3).unwrap();
        assert_eq!(z.rows(), 2 * 3 * 7);
        assert!(z.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        for (a, b) in z.iter_rows().take(7).zip(test.instances.iter_rows()) {
            assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() <= 0.05 + 1e-12));
        }
    }

    #[test]
    fn dominant_champion_takes_all_weight() {
        let mut r = run(diagonal(40, 2), &config(3)).unwrap();
        let strong = r.best_tree_per_island[0].0.clone();
        let weak = DecisionTree { root: inverted(&strong.root) };
        r.best_tree_per_island[1].0 = weak.clone();
        r.best_tree_per_island[2].0 = weak;
        let c = compose_nash(&r).unwrap();
        // complementary accuracies: row 0 strictly dominates while it beats one half
        assert!((0..c.payoff.cols()).all(|j| c.payoff.get(0, j) > 0.5));
        let weights: Vec<f64> = c.forest.weights().collect();
        assert_eq!(weights, vec![1.0, 0.0, 0.0]);
        assert_eq!(c.forest.members()[0].0, strong);
    }
}
