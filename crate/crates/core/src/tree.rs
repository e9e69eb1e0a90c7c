//! Axis-aligned decision trees and the genetic operators of the tree
//! population.
//!
//! Routing convention: an instance goes left iff `x[feature] <= threshold`.
//! Nodes are addressed by their preorder index, root = 0.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(class: usize) -> Self {
        TreeNode::Leaf { class }
    }

    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Split { feature, threshold, left: Box::new(left), right: Box::new(right) }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    /// Depth of the subtree; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn collect_leaf_classes(&self, out: &mut Vec<usize>) {
        match self {
            TreeNode::Leaf { class } => out.push(*class),
            TreeNode::Split { left, right, .. } => {
                left.collect_leaf_classes(out);
                right.collect_leaf_classes(out);
            }
        }
    }

    /// Most frequent leaf class below this node, lowest index on ties.
    pub fn majority_leaf_class(&self) -> usize {
        let mut classes = Vec::new();
        self.collect_leaf_classes(&mut classes);
        let size = classes.iter().copied().max().unwrap_or(0) + 1;
        let mut counts = vec![0usize; size];
        for c in classes {
            counts[c] += 1;
        }
        argmax_lowest(&counts)
    }

    fn node(&self, mut index: usize) -> Option<(&TreeNode, usize)> {
        let mut node = self;
        let mut depth = 0;
        loop {
            if index == 0 {
                return Some((node, depth));
            }
            match node {
                TreeNode::Leaf { .. } => return None,
                TreeNode::Split { left, right, .. } => {
                    let left_size = left.node_count();
                    index -= 1;
                    depth += 1;
                    if index < left_size {
                        node = left;
                    } else {
                        index -= left_size;
                        node = right;
                    }
                }
            }
        }
    }

    fn node_mut(&mut self, mut index: usize) -> Option<&mut TreeNode> {
        let mut node = self;
        loop {
            if index == 0 {
                return Some(node);
            }
            match node {
                TreeNode::Leaf { .. } => return None,
                TreeNode::Split { left, right, .. } => {
                    let left_size = left.node_count();
                    index -= 1;
                    if index < left_size {
                        node = left;
                    } else {
                        index -= left_size;
                        node = right;
                    }
                }
            }
        }
    }

    fn truncate(&mut self, remaining: usize) -> bool {
        match self {
            TreeNode::Leaf { .. } => false,
            TreeNode::Split { left, right, .. } => {
                if remaining == 0 {
                    *self = TreeNode::leaf(self.majority_leaf_class());
                    true
                } else {
                    let l = left.truncate(remaining - 1);
                    let r = right.truncate(remaining - 1);
                    l || r
                }
            }
        }
    }

    fn validate(&self, d: usize, c: usize) -> Result<()> {
        match self {
            TreeNode::Leaf { class } => {
                if *class >= c {
                    return Err(Error::InvalidTree(format!("leaf class {class} >= {c}")));
                }
            }
            TreeNode::Split { feature, threshold, left, right } => {
                if *feature >= d {
                    return Err(Error::InvalidTree(format!("feature {feature} >= {d}")));
                }
                if !(0.0..=1.0).contains(threshold) {
                    return Err(Error::InvalidTree(format!("threshold {threshold} outside [0, 1]")));
                }
                left.validate(d, c)?;
                right.validate(d, c)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax_lowest<T: PartialOrd>(counts: &[T]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub root: TreeNode,
}

impl From<TreeNode> for DecisionTree {
    fn from(root: TreeNode) -> Self {
        Self { root }
    }
}

/// The search space trees live in and the knobs of random generation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TreeSpace {
    pub num_features: usize,
    pub num_classes: usize,
    /// Hard cap applied after every operator.
    pub max_depth: usize,
    /// Depth bound of freshly generated trees and replacement subtrees.
    pub init_depth: usize,
    /// Probability that a non-forced node becomes a leaf during generation.
    pub leaf_prob: f64,
}

impl TreeSpace {
    pub fn new(num_features: usize, num_classes: usize) -> Self {
        Self { num_features, num_classes, max_depth: 10, init_depth: 3, leaf_prob: 0.3 }
    }
}

impl DecisionTree {
    pub fn leaf(class: usize) -> Self {
        TreeNode::leaf(class).into()
    }

    pub fn stump(feature: usize, threshold: f64, left: usize, right: usize) -> Self {
        TreeNode::split(feature, threshold, TreeNode::leaf(left), TreeNode::leaf(right)).into()
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaf_classes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.root.collect_leaf_classes(&mut out);
        out
    }

    /// Node at preorder `index` together with its depth.
    pub fn node(&self, index: usize) -> Option<(&TreeNode, usize)> {
        self.root.node(index)
    }

    fn internal_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        let mut index = 0;
        // Preorder walk: push right first so left is visited first.
        while let Some(node) = stack.pop() {
            if let TreeNode::Split { left, right, .. } = node {
                out.push(index);
                stack.push(right);
                stack.push(left);
            }
            index += 1;
        }
        out
    }

    /// Returns a copy with the subtree at `index` replaced.
    pub fn with_subtree(&self, index: usize, subtree: TreeNode) -> DecisionTree {
        let mut out = self.clone();
        *out.root.node_mut(index).expect("node index in range") = subtree;
        out
    }

    /// Replaces every internal node at depth `max_depth` by a leaf labelled
    /// with its subtree's majority leaf class. Returns whether anything was cut.
    pub fn truncate(&mut self, max_depth: usize) -> bool {
        self.root.truncate(max_depth)
    }

    /// Checks feature, threshold, class and depth bounds.
    pub fn validate(&self, num_features: usize, num_classes: usize, max_depth: usize) -> Result<()> {
        self.root.validate(num_features, num_classes)?;
        let depth = self.depth();
        if depth > max_depth {
            return Err(Error::InvalidTree(format!("depth {depth} exceeds {max_depth}")));
        }
        Ok(())
    }

    /// Decomposes the unit cube into the boxes routed to each leaf.
    pub fn leaf_regions(&self, num_features: usize) -> Vec<LeafRegion> {
        let mut out = Vec::new();
        let start = LeafRegion {
            lower: vec![0.0; num_features],
            upper: vec![1.0; num_features],
            lower_open: vec![false; num_features],
            class: 0,
        };
        collect_regions(&self.root, start, &mut out);
        out
    }
}

fn collect_regions(node: &TreeNode, region: LeafRegion, out: &mut Vec<LeafRegion>) {
    match node {
        TreeNode::Leaf { class } => out.push(LeafRegion { class: *class, ..region }),
        TreeNode::Split { feature, threshold, left, right } => {
            let f = *feature;
            let t = *threshold;
            let mut l = region.clone();
            if t < l.upper[f] {
                l.upper[f] = t;
            }
            let mut r = region;
            if t >= r.lower[f] {
                r.lower[f] = t;
                r.lower_open[f] = true;
            }
            collect_regions(left, l, out);
            collect_regions(right, r, out);
        }
    }
}

/// Axis-aligned box of the unit cube routed to one leaf. Each side is closed
/// above; it is open below where the bound comes from a right branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower_open: Vec<bool>,
    pub class: usize,
}

impl LeafRegion {
    fn side_meets(&self, j: usize, a: f64, b: f64) -> bool {
        let (lo, hi) = (self.lower[j], self.upper[j]);
        let above_lower = if self.lower_open[j] { b > lo } else { b >= lo };
        let below_upper = a <= hi;
        let nonempty = if self.lower_open[j] { lo < hi } else { lo <= hi };
        nonempty && above_lower && below_upper && a <= b
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.lower.len()).all(|j| self.side_meets(j, x[j], x[j]))
    }

    pub fn is_empty(&self) -> bool {
        (0..self.lower.len()).any(|j| {
            if self.lower_open[j] {
                self.lower[j] >= self.upper[j]
            } else {
                self.lower[j] > self.upper[j]
            }
        })
    }

    /// Whether the region meets the closed box `[lo_j, hi_j]` in every axis.
    pub fn intersects_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        (0..self.lower.len()).all(|j| self.side_meets(j, lo[j], hi[j]))
    }
}

/// Random tree of depth at most `max_depth`: each node becomes a leaf with
/// probability `space.leaf_prob`, and always at the depth limit.
pub fn random_tree<R: Rng + ?Sized>(max_depth: usize, space: &TreeSpace, rng: &mut R) -> DecisionTree {
    random_node(max_depth, space, rng).into()
}

fn random_node<R: Rng + ?Sized>(remaining: usize, space: &TreeSpace, rng: &mut R) -> TreeNode {
    if remaining == 0 || rng.random_bool(space.leaf_prob) {
        return TreeNode::leaf(rng.random_range(0..space.num_classes));
    }
    let feature = rng.random_range(0..space.num_features);
    let threshold = rng.random::<f64>();
    let left = random_node(remaining - 1, space, rng);
    let right = random_node(remaining - 1, space, rng);
    TreeNode::split(feature, threshold, left, right)
}

/// The three mutation actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    ReplaceSubtree,
    RerandomizeNode,
    PruneSubtree,
}

/// Applies one mutation action chosen uniformly among those available.
/// Pruning needs an internal node, so single leaves only get the other two.
pub fn mutate_tree<R: Rng + ?Sized>(tree: &DecisionTree, space: &TreeSpace, rng: &mut R) -> DecisionTree {
    let action = if tree.root.is_leaf() {
        [Mutation::ReplaceSubtree, Mutation::RerandomizeNode][rng.random_range(0..2)]
    } else {
        [Mutation::ReplaceSubtree, Mutation::RerandomizeNode, Mutation::PruneSubtree]
            [rng.random_range(0..3)]
    };
    mutate_with(tree, action, space, rng)
}

pub fn mutate_with<R: Rng + ?Sized>(
    tree: &DecisionTree,
    action: Mutation,
    space: &TreeSpace,
    rng: &mut R,
) -> DecisionTree {
    let mut out = match action {
        Mutation::ReplaceSubtree => {
            let index = rng.random_range(0..tree.node_count());
            let fresh = random_node(space.init_depth, space, rng);
            tree.with_subtree(index, fresh)
        }
        Mutation::RerandomizeNode => {
            let index = rng.random_range(0..tree.node_count());
            let mut out = tree.clone();
            let node = out.root.node_mut(index).expect("node index in range");
            match node {
                TreeNode::Leaf { class } => {
                    if space.num_classes > 1 {
                        let shift = rng.random_range(1..space.num_classes);
                        *class = (*class + shift) % space.num_classes;
                    }
                }
                TreeNode::Split { feature, threshold, .. } => match rng.random_range(0..3) {
                    0 => *feature = rng.random_range(0..space.num_features),
                    1 => *threshold = rng.random::<f64>(),
                    _ => {
                        *feature = rng.random_range(0..space.num_features);
                        *threshold = rng.random::<f64>();
                    }
                },
            }
            out
        }
        Mutation::PruneSubtree => {
            let internal = tree.internal_indices();
            if internal.is_empty() {
                return mutate_with(tree, Mutation::ReplaceSubtree, space, rng);
            }
            let index = internal[rng.random_range(0..internal.len())];
            let (node, _) = tree.node(index).expect("node index in range");
            tree.with_subtree(index, TreeNode::leaf(node.majority_leaf_class()))
        }
    };
    out.truncate(space.max_depth);
    out
}

/// Swaps a uniformly chosen subtree of each parent.
pub fn crossover_trees<R: Rng + ?Sized>(
    a: &DecisionTree,
    b: &DecisionTree,
    space: &TreeSpace,
    rng: &mut R,
) -> (DecisionTree, DecisionTree) {
    let i = rng.random_range(0..a.node_count());
    let j = rng.random_range(0..b.node_count());
    let (sub_a, _) = a.node(i).expect("node index in range");
    let (sub_b, _) = b.node(j).expect("node index in range");
    let mut child_a = a.with_subtree(i, sub_b.clone());
    let mut child_b = b.with_subtree(j, sub_a.clone());
    child_a.truncate(space.max_depth);
    child_b.truncate(space.max_depth);
    (child_a, child_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn space(d: usize, c: usize) -> TreeSpace {
        TreeSpace::new(d, c)
    }

    #[test]
    fn predict_routes_boundary_left() {
        assert_eq!(DecisionTree::leaf(0).predict(&[0.9]), 0);
        let stump = DecisionTree::stump(0, 0.5, 0, 1);
        assert_eq!(stump.predict(&[0.5]), 0);
        assert_eq!(stump.predict(&[0.51]), 1);
    }

    #[test]
    fn random_tree_depth_bounds_and_determinism() {
        let sp = space(3, 2);
        let mut rng = seeded(5);
        assert!(random_tree(0, &sp, &mut rng).root.is_leaf());
        for _ in 0..10_000 {
            let t = random_tree(3, &sp, &mut rng);
            assert!(t.depth() <= 3);
            t.validate(3, 2, 3).unwrap();
        }
        assert_eq!(random_tree(3, &sp, &mut seeded(9)), random_tree(3, &sp, &mut seeded(9)));
    }

    #[test]
    fn preorder_addressing() {
        let t: DecisionTree = TreeNode::split(
            0,
            0.5,
            TreeNode::split(1, 0.2, TreeNode::leaf(0), TreeNode::leaf(1)),
            TreeNode::leaf(2),
        )
        .into();
        assert_eq!(t.node(0).unwrap().1, 0);
        assert_eq!(t.node(2).unwrap().0, &TreeNode::leaf(0));
        assert_eq!(t.node(4).unwrap(), (&TreeNode::leaf(2), 1));
        assert!(t.node(5).is_none());
        assert_eq!(t.internal_indices(), vec![0, 1]);
    }

    #[test]
    fn truncation_uses_majority_leaf() {
        let mut t: DecisionTree = TreeNode::split(
            0,
            0.5,
            TreeNode::split(
                1,
                0.2,
                TreeNode::leaf(1),
                TreeNode::split(0, 0.1, TreeNode::leaf(0), TreeNode::leaf(1)),
            ),
            TreeNode::leaf(0),
        )
        .into();
        assert!(t.truncate(1));
        assert_eq!(t, DecisionTree::stump(0, 0.5, 1, 0));
        // tie between 0 and 1 resolves to 0
        let mut tie = DecisionTree::stump(0, 0.5, 1, 0);
        tie.truncate(0);
        assert_eq!(tie, DecisionTree::leaf(0));
    }

    #[test]
    fn mutating_a_leaf_never_prunes() {
        let sp = space(2, 3);
        let leaf = DecisionTree::leaf(1);
        let mut rng = seeded(11);
        for _ in 0..200 {
            let m = mutate_tree(&leaf, &sp, &mut rng);
            m.validate(2, 3, sp.max_depth).unwrap();
        }
        assert_eq!(leaf, DecisionTree::leaf(1));
        let pruned = mutate_with(&leaf, Mutation::PruneSubtree, &sp, &mut seeded(1));
        pruned.validate(2, 3, sp.max_depth).unwrap();
    }

    #[test]
    fn mutation_preserves_invariants_and_inputs() {
        let sp = TreeSpace { max_depth: 5, ..space(4, 3) };
        let mut rng = seeded(21);
        let mut tree = random_tree(3, &sp, &mut rng);
        for _ in 0..10_000 {
            let before = tree.clone();
            let next = mutate_tree(&tree, &sp, &mut rng);
            assert_eq!(tree, before);
            next.validate(4, 3, 5).unwrap();
            tree = next;
        }
        let t = random_tree(3, &sp, &mut seeded(2));
        assert_eq!(mutate_tree(&t, &sp, &mut seeded(4)), mutate_tree(&t, &sp, &mut seeded(4)));
    }

    #[test]
    fn rerandomized_leaf_changes_class() {
        let sp = space(1, 2);
        let m = mutate_with(&DecisionTree::leaf(0), Mutation::RerandomizeNode, &sp, &mut seeded(0));
        assert_eq!(m, DecisionTree::leaf(1));
    }

    #[test]
    fn prune_collapses_to_majority() {
        let sp = space(1, 2);
        let t: DecisionTree =
            TreeNode::split(0, 0.5, TreeNode::leaf(1), TreeNode::leaf(1)).into();
        let m = mutate_with(&t, Mutation::PruneSubtree, &sp, &mut seeded(0));
        assert_eq!(m, DecisionTree::leaf(1));
    }

    #[test]
    fn crossover_of_leaves_swaps_them() {
        let sp = space(1, 2);
        let (a, b) =
            crossover_trees(&DecisionTree::leaf(0), &DecisionTree::leaf(1), &sp, &mut seeded(3));
        assert_eq!(a, DecisionTree::leaf(1));
        assert_eq!(b, DecisionTree::leaf(0));
    }

    #[test]
    fn crossover_preserves_invariants_and_leaf_multiset() {
        let sp = TreeSpace { max_depth: 6, ..space(3, 4) };
        let mut rng = seeded(8);
        for _ in 0..10_000 {
            let a = random_tree(4, &sp, &mut rng);
            let b = random_tree(4, &sp, &mut rng);
            let (ca, cb) = crossover_trees(&a, &b, &sp, &mut rng);
            ca.validate(3, 4, 6).unwrap();
            cb.validate(3, 4, 6).unwrap();
            if a.depth() + b.depth() <= 6 {
                // no truncation can have fired
                let mut parents: Vec<usize> = a.leaf_classes();
                parents.extend(b.leaf_classes());
                let mut kids = ca.leaf_classes();
                kids.extend(cb.leaf_classes());
                parents.sort_unstable();
                kids.sort_unstable();
                assert_eq!(parents, kids);
            }
        }
    }

    #[test]
    fn leaf_regions_of_leaf_and_stump() {
        let r = DecisionTree::leaf(1).leaf_regions(2);
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].lower.clone(), r[0].upper.clone()), (vec![0.0, 0.0], vec![1.0, 1.0]));

        let r = DecisionTree::stump(0, 0.5, 0, 1).leaf_regions(1);
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].lower[0], r[0].upper[0], r[0].lower_open[0], r[0].class), (0.0, 0.5, false, 0));
        assert_eq!((r[1].lower[0], r[1].upper[0], r[1].lower_open[0], r[1].class), (0.5, 1.0, true, 1));
        assert!(r[0].contains(&[0.5]) && !r[1].contains(&[0.5]));
    }

    #[test]
    fn leaf_regions_agree_with_predict() {
        let sp = TreeSpace { max_depth: 6, ..space(3, 3) };
        let mut rng = seeded(17);
        for _ in 0..50 {
            let t = random_tree(6, &sp, &mut rng);
            let regions = t.leaf_regions(3);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let hits: Vec<&LeafRegion> = regions.iter().filter(|r| r.contains(&x)).collect();
                assert_eq!(hits.len(), 1);
                assert_eq!(hits[0].class, t.predict(&x));
            }
        }
    }
}
