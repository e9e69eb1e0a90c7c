//! Evaluation quantities: clean and adversarial accuracy, CART reference
//! models, regret and max regret, and prediction diversity.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::perturbation::{sample_uniform, Perturbation};
use crate::tree::{argmax_lowest, DecisionTree, LeafRegion, TreeNode};

pub use cart::{train_cart, CartParams};

/// Anything that maps a feature vector to a class index.
pub trait Classifier {
    fn predict(&self, x: &[f64]) -> usize;
}

impl Classifier for DecisionTree {
    #[inline]
    fn predict(&self, x: &[f64]) -> usize {
        DecisionTree::predict(self, x)
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    #[inline]
    fn predict(&self, x: &[f64]) -> usize {
        (**self).predict(x)
    }
}

/// The robustness objective being optimized. Tree payoffs are oriented so
/// that higher is always better for the tree player.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MetricKind {
    AdversarialAccuracy,
    MaxRegret,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::AdversarialAccuracy => "adversarial_accuracy",
            MetricKind::MaxRegret => "max_regret",
        }
    }
}

impl core::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adversarial_accuracy" | "accuracy" | "adv" => Ok(MetricKind::AdversarialAccuracy),
            "max_regret" | "regret" | "mr" => Ok(MetricKind::MaxRegret),
            other => Err(Error::InvalidArgument(alloc::format!("unknown metric '{other}'"))),
        }
    }
}

fn check_rows(instances: &Matrix, labels: &[usize]) -> Result<()> {
    if instances.rows() == 0 {
        return Err(Error::Empty("no instances to evaluate"));
    }
    if instances.rows() != labels.len() {
        return Err(Error::Shape(alloc::format!(
            "{} instances but {} labels",
            instances.rows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Number of rows classified correctly.
#[inline]
pub fn correct_count<C: Classifier + ?Sized>(pred: &C, instances: &Matrix, labels: &[usize]) -> usize {
    instances
        .iter_rows()
        .zip(labels)
        .filter(|(x, &y)| pred.predict(x) == y)
        .count()
}

pub fn accuracy<C: Classifier + ?Sized>(pred: &C, instances: &Matrix, labels: &[usize]) -> Result<f64> {
    check_rows(instances, labels)?;
    Ok(correct_count(pred, instances, labels) as f64 / labels.len() as f64)
}

/// Exact worst-case accuracy of a single tree over the L∞ ball of radius
/// `epsilon` around every instance.
///
/// An instance counts as robust iff every leaf region reachable from its
/// ball (intersected with the unit cube) carries the true label.
pub fn adversarial_accuracy_exact_tree(
    tree: &DecisionTree,
    instances: &Matrix,
    labels: &[usize],
    epsilon: f64,
) -> Result<f64> {
    check_rows(instances, labels)?;
    let d = instances.cols();
    let regions: Vec<LeafRegion> =
        tree.leaf_regions(d).into_iter().filter(|r| !r.is_empty()).collect();
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    let mut robust = 0usize;
    for (x, &y) in instances.iter_rows().zip(labels) {
        for j in 0..d {
            lo[j] = (x[j] - epsilon).max(0.0);
            hi[j] = (x[j] + epsilon).min(1.0);
        }
        if regions.iter().all(|r| r.class == y || !r.intersects_box(&lo, &hi)) {
            robust += 1;
        }
    }
    Ok(robust as f64 / labels.len() as f64)
}

/// Per-instance worst case over a finite perturbation set.
///
/// This upper-bounds the true adversarial accuracy.
pub fn adversarial_accuracy_empirical<C: Classifier + ?Sized>(
    pred: &C,
    instances: &Matrix,
    labels: &[usize],
    perturbations: &[Perturbation],
) -> Result<f64> {
    check_rows(instances, labels)?;
    if perturbations.is_empty() {
        return Err(Error::Empty("perturbation set"));
    }
    let mut robust = vec![true; labels.len()];
    for p in perturbations {
        let z = p.apply_to(instances)?;
        for (i, x) in z.iter_rows().enumerate() {
            if robust[i] && pred.predict(x) != labels[i] {
                robust[i] = false;
            }
        }
    }
    Ok(robust.iter().filter(|&&r| r).count() as f64 / labels.len() as f64)
}

/// [`adversarial_accuracy_empirical`] over the clean data and `n_samples`
/// uniform perturbations drawn in sequence from `rng`, without holding them
/// all in memory.
pub fn adversarial_accuracy_sampled<C: Classifier + ?Sized, R: Rng + ?Sized>(
    pred: &C,
    instances: &Matrix,
    labels: &[usize],
    epsilon: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_rows(instances, labels)?;
    let mut robust: Vec<bool> =
        instances.iter_rows().zip(labels).map(|(x, &y)| pred.predict(x) == y).collect();
    for _ in 0..n_samples {
        let z = sample_uniform(instances.rows(), instances.cols(), epsilon, rng).apply_to(instances)?;
        for (i, x) in z.iter_rows().enumerate() {
            if robust[i] && pred.predict(x) != labels[i] {
                robust[i] = false;
            }
        }
    }
    Ok(robust.iter().filter(|&&r| r).count() as f64 / labels.len() as f64)
}

/// Training accuracy of a CART tree fit on the perturbed instances; memoized
/// on the perturbation.
pub fn reference_accuracy(
    p: &mut Perturbation,
    instances: &Matrix,
    labels: &[usize],
    params: &CartParams,
) -> Result<f64> {
    if let Some(v) = p.cached_reference_accuracy() {
        return Ok(v);
    }
    let z = p.apply_to(instances)?;
    let value = reference_accuracy_on(&z, labels, params)?;
    p.set_reference_accuracy(value)?;
    Ok(value)
}

/// Reference accuracy on already-perturbed instances, without memoization.
pub fn reference_accuracy_on(perturbed: &Matrix, labels: &[usize], params: &CartParams) -> Result<f64> {
    let cart = train_cart(perturbed, labels, params)?;
    accuracy(&cart, perturbed, labels)
}

/// Reference accuracy minus the predictor's accuracy on the perturbed data.
/// Negative when the predictor beats the reference.
pub fn regret<C: Classifier + ?Sized>(
    pred: &C,
    p: &mut Perturbation,
    instances: &Matrix,
    labels: &[usize],
    params: &CartParams,
) -> Result<f64> {
    let reference = reference_accuracy(p, instances, labels, params)?;
    let z = p.apply_to(instances)?;
    Ok(reference - accuracy(pred, &z, labels)?)
}

/// Largest regret over the zero perturbation and `n_samples` uniform ones
/// drawn in sequence from `rng`. A lower bound on the true max regret.
pub fn max_regret_empirical<C: Classifier + ?Sized, R: Rng + ?Sized>(
    pred: &C,
    instances: &Matrix,
    labels: &[usize],
    epsilon: f64,
    n_samples: usize,
    rng: &mut R,
    params: &CartParams,
) -> Result<f64> {
    let mut zero = Perturbation::zero(instances.rows(), instances.cols(), epsilon);
    let mut worst = regret(pred, &mut zero, instances, labels, params)?;
    for _ in 0..n_samples {
        let mut p = sample_uniform(instances.rows(), instances.cols(), epsilon, rng);
        worst = worst.max(regret(pred, &mut p, instances, labels, params)?);
    }
    Ok(worst)
}

/// Fraction of rows on which the two trees disagree.
pub fn pairwise_diversity(a: &DecisionTree, b: &DecisionTree, perturbed: &Matrix) -> Result<f64> {
    if perturbed.rows() == 0 {
        return Err(Error::Empty("no perturbed instances"));
    }
    let differ = perturbed.iter_rows().filter(|x| a.predict(x) != b.predict(x)).count();
    Ok(differ as f64 / perturbed.rows() as f64)
}

/// Mean and maximum pairwise diversity over all unordered pairs.
pub fn ensemble_diversity(trees: &[&DecisionTree], perturbed: &Matrix) -> Result<(f64, f64)> {
    if trees.len() < 2 {
        return Err(Error::InvalidArgument("diversity needs at least 2 trees".into()));
    }
    if perturbed.rows() == 0 {
        return Err(Error::Empty("no perturbed instances"));
    }
    let predictions: Vec<Vec<usize>> = trees
        .iter()
        .map(|t| perturbed.iter_rows().map(|x| t.predict(x)).collect())
        .collect();
    let m = perturbed.rows() as f64;
    let n = trees.len();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let differ = predictions[i].iter().zip(&predictions[j]).filter(|(a, b)| a != b).count();
            let div = differ as f64 / m;
            sum += div;
            max = max.max(div);
        }
    }
    let avg = 2.0 * sum / (n * (n - 1)) as f64;
    Ok((avg, max))
}

mod cart {
    use super::*;

    /// Hyperparameters of the CART reference learner.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    #[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
    pub struct CartParams {
        pub max_depth: usize,
        pub min_leaf: usize,
    }

    impl Default for CartParams {
        fn default() -> Self {
            Self { max_depth: 10, min_leaf: 2 }
        }
    }

    const IMPURITY_TOL: f64 = 1e-12;

    /// Greedy Gini-impurity tree.
    ///
    /// Candidate thresholds are midpoints between consecutive distinct
    /// values. A node stays a leaf when it is pure, at `max_depth`, when no
    /// split leaves `min_leaf` rows on both sides, or when no split lowers
    /// impurity. Ties go to the lowest feature, then the lowest threshold;
    /// leaves take the majority class with ties to the lowest index.
    pub fn train_cart(instances: &Matrix, labels: &[usize], params: &CartParams) -> Result<DecisionTree> {
        check_rows(instances, labels)?;
        let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
        let mut builder = Builder {
            instances,
            labels,
            num_classes,
            params,
            order: Vec::with_capacity(labels.len()),
        };
        let mut indices: Vec<usize> = (0..labels.len()).collect();
        Ok(builder.build(&mut indices, 0).into())
    }

    struct Builder<'a> {
        instances: &'a Matrix,
        labels: &'a [usize],
        num_classes: usize,
        params: &'a CartParams,
        order: Vec<(f64, usize)>,
    }

    fn gini(counts: &[usize], n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n = n as f64;
        1.0 - counts.iter().map(|&c| (c as f64 / n) * (c as f64 / n)).sum::<f64>()
    }

    impl Builder<'_> {
        fn build(&mut self, indices: &mut [usize], depth: usize) -> TreeNode {
            let n = indices.len();
            let mut counts = vec![0usize; self.num_classes];
            for &i in indices.iter() {
                counts[self.labels[i]] += 1;
            }
            let majority = argmax_lowest(&counts);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let min_leaf = self.params.min_leaf.max(1);
            if pure || depth >= self.params.max_depth || n < 2 * min_leaf {
                return TreeNode::leaf(majority);
            }
            let parent = gini(&counts, n);
            let mut best: Option<(f64, usize, f64)> = None;
            let mut left_counts = vec![0usize; self.num_classes];
            let mut right_counts = vec![0usize; self.num_classes];
            for f in 0..self.instances.cols() {
                self.order.clear();
                self.order.extend(indices.iter().map(|&i| (self.instances.get(i, f), i)));
                self.order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                left_counts.iter_mut().for_each(|c| *c = 0);
                right_counts.copy_from_slice(&counts);
                for k in 0..n - 1 {
                    let (v, i) = self.order[k];
                    left_counts[self.labels[i]] += 1;
                    right_counts[self.labels[i]] -= 1;
                    let next = self.order[k + 1].0;
                    let n_left = k + 1;
                    if next <= v || n_left < min_leaf || n - n_left < min_leaf {
                        continue;
                    }
                    let impurity = (n_left as f64 * gini(&left_counts, n_left)
                        + (n - n_left) as f64 * gini(&right_counts, n - n_left))
                        / n as f64;
                    if best.is_none_or(|(b, _, _)| impurity < b - IMPURITY_TOL) {
                        best = Some((impurity, f, v + (next - v) / 2.0));
                    }
                }
            }
            match best {
                Some((impurity, feature, threshold)) if impurity < parent - IMPURITY_TOL => {
                    let split =
                        partition(indices, |i| self.instances.get(i, feature) <= threshold);
                    let (left, right) = indices.split_at_mut(split);
                    let l = self.build(left, depth + 1);
                    let r = self.build(right, depth + 1);
                    TreeNode::split(feature, threshold, l, r)
                }
                _ => TreeNode::leaf(majority),
            }
        }
    }

    /// Stable partition; returns the number of elements satisfying `pred`.
    fn partition(indices: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
        let (yes, no): (Vec<usize>, Vec<usize>) = indices.iter().partition(|&&i| pred(i));
        let k = yes.len();
        for (slot, v) in indices.iter_mut().zip(yes.into_iter().chain(no)) {
            *slot = v;
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tree::{random_tree, TreeSpace};

    fn column(values: &[f64]) -> Matrix {
        let rows: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let x = column(&[0.1, 0.4, 0.6, 0.9]);
        let stump = DecisionTree::stump(0, 0.5, 0, 1);
        assert_eq!(accuracy(&stump, &x, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&stump, &x, &[0, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&DecisionTree::leaf(1), &x, &[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(accuracy(&stump, &Matrix::zeros(0, 1), &[]).is_err());
    }

    #[test]
    fn exact_adversarial_accuracy_stump() {
        let x = column(&[0.3, 0.7]);
        let y = [0, 1];
        let stump = DecisionTree::stump(0, 0.5, 0, 1);
        assert_eq!(adversarial_accuracy_exact_tree(&stump, &x, &y, 0.0).unwrap(), 1.0);
        assert_eq!(adversarial_accuracy_exact_tree(&stump, &x, &y, 0.1).unwrap(), 1.0);
        assert_eq!(adversarial_accuracy_exact_tree(&stump, &x, &y, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn exact_matches_clean_at_zero_epsilon() {
        let space = TreeSpace::new(2, 3);
        let mut rng = seeded(3);
        for _ in 0..100 {
            let t = random_tree(4, &space, &mut rng);
            let rows: Vec<[f64; 2]> = (0..30).map(|_| [rng.random(), rng.random()]).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let y: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
            assert_eq!(
                adversarial_accuracy_exact_tree(&t, &x, &y, 0.0).unwrap(),
                accuracy(&t, &x, &y).unwrap()
            );
        }
    }

    #[test]
    fn empirical_bounds() {
        let x = column(&[0.3, 0.45, 0.7]);
        let y = [0, 0, 1];
        let stump = DecisionTree::stump(0, 0.5, 0, 1);
        let zero = Perturbation::zero(3, 1, 0.1);
        assert_eq!(
            adversarial_accuracy_empirical(&stump, &x, &y, core::slice::from_ref(&zero)).unwrap(),
            accuracy(&stump, &x, &y).unwrap()
        );
        let push = Perturbation::new(column(&[0.0, 0.1, 0.0]), 0.1).unwrap();
        let both = [zero, push];
        let emp = adversarial_accuracy_empirical(&stump, &x, &y, &both).unwrap();
        assert!((emp - 2.0 / 3.0).abs() < 1e-15);
        assert!(emp >= adversarial_accuracy_exact_tree(&stump, &x, &y, 0.1).unwrap());
        assert!(adversarial_accuracy_empirical(&stump, &x, &y, &[]).is_err());
    }

    #[test]
    fn cart_pure_and_separable() {
        let x = column(&[0.1, 0.2, 0.3]);
        assert_eq!(train_cart(&x, &[1, 1, 1], &CartParams::default()).unwrap(), DecisionTree::leaf(1));

        let x = column(&[0.1, 0.2, 0.3, 0.7, 0.8, 0.9]);
        let y = [0, 0, 0, 1, 1, 1];
        let t = train_cart(&x, &y, &CartParams::default()).unwrap();
        assert_eq!(t, DecisionTree::stump(0, 0.5, 0, 1));
        assert_eq!(accuracy(&t, &x, &y).unwrap(), 1.0);
        assert!(train_cart(&Matrix::zeros(0, 1), &[], &CartParams::default()).is_err());
    }

    #[test]
    fn cart_respects_min_leaf_and_depth() {
        let x = column(&[0.1, 0.2, 0.3, 0.4]);
        let y = [0, 1, 1, 1];
        let t = train_cart(&x, &y, &CartParams { max_depth: 10, min_leaf: 2 }).unwrap();
        // isolating the single 0 would leave a child of size 1
        assert_eq!(t, DecisionTree::stump(0, 0.25, 0, 1));
        let t = train_cart(&x, &y, &CartParams { max_depth: 0, min_leaf: 1 }).unwrap();
        assert_eq!(t, DecisionTree::leaf(1));
    }

    #[test]
    fn cart_beats_constant_and_is_deterministic() {
        let mut rng = seeded(12);
        for _ in 0..50 {
            let rows: Vec<[f64; 3]> =
                (0..60).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let y: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
            let t = train_cart(&x, &y, &CartParams::default()).unwrap();
            let mut counts = [0usize; 3];
            y.iter().for_each(|&c| counts[c] += 1);
            let baseline = *counts.iter().max().unwrap() as f64 / 60.0;
            assert!(accuracy(&t, &x, &y).unwrap() >= baseline);
            assert_eq!(t, train_cart(&x, &y, &CartParams::default()).unwrap());
        }
    }

    #[test]
    fn regret_fixtures() {
        let x = column(&[0.1, 0.2, 0.8, 0.9]);
        let y = [0, 0, 1, 1];
        let cart = CartParams::default();
        let mut zero = Perturbation::zero(4, 1, 0.05);
        assert_eq!(reference_accuracy(&mut zero, &x, &y, &cart).unwrap(), 1.0);
        assert_eq!(zero.cached_reference_accuracy(), Some(1.0));

        let reference = train_cart(&x, &y, &cart).unwrap();
        assert_eq!(regret(&reference, &mut zero, &x, &y, &cart).unwrap(), 0.0);
        let wrong = DecisionTree::stump(0, 0.5, 1, 0);
        assert_eq!(regret(&wrong, &mut zero, &x, &y, &cart).unwrap(), 1.0);
        let half = DecisionTree::leaf(0);
        let r_half = regret(&half, &mut zero, &x, &y, &cart).unwrap();
        let r_wrong = regret(&wrong, &mut zero, &x, &y, &cart).unwrap();
        assert_eq!(r_wrong - r_half, -(0.0 - 0.5));
    }

    #[test]
    fn max_regret_zero_epsilon_and_monotone() {
        let x = column(&[0.1, 0.2, 0.45, 0.55, 0.8, 0.9]);
        let y = [0, 0, 0, 1, 1, 1];
        let cart = CartParams::default();
        let t = DecisionTree::stump(0, 0.5, 0, 1);
        assert_eq!(max_regret_empirical(&t, &x, &y, 0.0, 0, &mut seeded(0), &cart).unwrap(), 0.0);
        let mut prev = f64::NEG_INFINITY;
        for n in [0, 1, 5, 20, 60] {
            let v = max_regret_empirical(&t, &x, &y, 0.1, n, &mut seeded(5), &cart).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn diversity_fixtures() {
        let x = column(&[0.1, 0.3, 0.6, 0.9]);
        let a = DecisionTree::stump(0, 0.5, 0, 1);
        let b = DecisionTree::stump(0, 0.2, 0, 1);
        assert_eq!(pairwise_diversity(&a, &a, &x).unwrap(), 0.0);
        assert_eq!(pairwise_diversity(&DecisionTree::leaf(0), &DecisionTree::leaf(1), &x).unwrap(), 1.0);
        assert_eq!(pairwise_diversity(&a, &b, &x).unwrap(), 0.25);
        assert!(ensemble_diversity(&[&a], &x).is_err());
        assert_eq!(ensemble_diversity(&[&a, &a, &a], &x).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn ensemble_diversity_three_trees() {
        // predictions on 5 points: t1 = 00000, t2 = 10000, t3 = 11100
        // div(t1,t2)=0.2, div(t2,t3)=0.4, div(t1,t3)=0.6
        let x = column(&[0.1, 0.3, 0.5, 0.7, 0.9]);
        let t1 = DecisionTree::leaf(0);
        let t2 = DecisionTree::stump(0, 0.2, 1, 0);
        let t3 = DecisionTree::stump(0, 0.6, 1, 0);
        let (avg, max) = ensemble_diversity(&[&t1, &t2, &t3], &x).unwrap();
        assert!((avg - 0.4).abs() < 1e-15);
        assert_eq!(max, 0.6);
    }
}
