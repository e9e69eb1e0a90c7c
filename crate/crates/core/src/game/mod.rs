//! Two-player zero-sum games between trees (rows, maximizing) and
//! perturbations (columns, minimizing).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{correct_count, reference_accuracy, CartParams, MetricKind};
use crate::perturbation::Perturbation;
use crate::tree::DecisionTree;

mod lemke_howson;
mod oracle;

pub use lemke_howson::lemke_howson;
pub use oracle::solve_zero_sum_oracle;

/// Payoffs to the row (tree) player.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMatrix {
    entries: Matrix,
}

impl PayoffMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::Empty("payoff matrix needs at least one row and column"));
        }
        for i in 0..entries.rows() {
            for j in 0..entries.cols() {
                if !entries.get(i, j).is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    /// `A y`
    pub fn row_payoffs(&self, col_probs: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .map(|i| self.entries.row(i).iter().zip(col_probs).map(|(a, q)| a * q).sum())
            .collect()
    }

    /// `xᵀ A`
    pub fn col_payoffs(&self, row_probs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (i, &p) in row_probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.entries.row(i)) {
                *o += p * a;
            }
        }
        out
    }

    /// `xᵀ A y`
    pub fn expected(&self, row_probs: &[f64], col_probs: &[f64]) -> f64 {
        self.row_payoffs(col_probs).iter().zip(row_probs).map(|(v, p)| v * p).sum()
    }

    /// Worst column payoff of a row mixture, `min_j (xᵀ A)_j`.
    pub fn guaranteed(&self, row_probs: &[f64]) -> f64 {
        self.col_payoffs(row_probs).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn transpose_negated(&self) -> PayoffMatrix {
        let mut t = self.entries.transpose();
        t.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        PayoffMatrix { entries: t }
    }
}

/// A mixed strategy for each player and the row player's expected payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedStrategyPair {
    pub row_probs: Vec<f64>,
    pub col_probs: Vec<f64>,
    pub value: f64,
}

impl MixedStrategyPair {
    pub fn pure(n: usize, row: usize, m: usize, col: usize, value: f64) -> Self {
        let mut row_probs = vec![0.0; n];
        let mut col_probs = vec![0.0; m];
        row_probs[row] = 1.0;
        col_probs[col] = 1.0;
        Self { row_probs, col_probs, value }
    }
}

/// Checks that neither player gains more than `tol` from a pure deviation.
pub fn verify_equilibrium(a: &PayoffMatrix, s: &MixedStrategyPair, tol: f64) -> bool {
    if s.row_probs.len() != a.rows() || s.col_probs.len() != a.cols() {
        return false;
    }
    let is_dist = |p: &[f64]| {
        p.iter().all(|&v| v >= -1e-12) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    };
    if !is_dist(&s.row_probs) || !is_dist(&s.col_probs) {
        return false;
    }
    let best_row = a.row_payoffs(&s.col_probs).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let best_col = a.col_payoffs(&s.row_probs).into_iter().fold(f64::INFINITY, f64::min);
    best_row <= s.value + tol && best_col >= s.value - tol
}

/// Which solver produced an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverUsed {
    LemkeHowson,
    Oracle,
}

/// Full solving pipeline: drop duplicate rows and columns, run Lemke-Howson,
/// fall back to the oracle if pivoting fails or the result does not verify,
/// then spread each group's probability evenly over its duplicates.
pub fn solve(a: &PayoffMatrix) -> Result<(MixedStrategyPair, SolverUsed)> {
    let row_groups = group_duplicates(a.rows(), |i, k| a.entries.row(i) == a.entries.row(k));
    let col_groups = group_duplicates(a.cols(), |j, k| {
        (0..a.rows()).all(|i| a.get(i, j) == a.get(i, k))
    });
    let reduced = if row_groups.len() == a.rows() && col_groups.len() == a.cols() {
        a.clone()
    } else {
        let mut m = Matrix::zeros(row_groups.len(), col_groups.len());
        for (gi, rg) in row_groups.iter().enumerate() {
            for (gj, cg) in col_groups.iter().enumerate() {
                m.set(gi, gj, a.get(rg[0], cg[0]));
            }
        }
        PayoffMatrix { entries: m }
    };

    let (small, used) = match lemke_howson(&reduced) {
        Ok(s) if verify_equilibrium(&reduced, &s, 1e-9) => (s, SolverUsed::LemkeHowson),
        outcome => {
            match &outcome {
                Ok(_) => log::warn!("lemke-howson result failed verification, using oracle"),
                Err(e) => log::warn!("lemke-howson failed ({e}), using oracle"),
            }
            (solve_zero_sum_oracle(&reduced)?, SolverUsed::Oracle)
        }
    };

    let expand = |groups: &[Vec<usize>], probs: &[f64], len: usize| {
        let mut out = vec![0.0; len];
        for (g, &p) in groups.iter().zip(probs) {
            let share = p / g.len() as f64;
            for &k in g {
                out[k] = share;
            }
        }
        out
    };
    let row_probs = expand(&row_groups, &small.row_probs, a.rows());
    let col_probs = expand(&col_groups, &small.col_probs, a.cols());
    let value = a.expected(&row_probs, &col_probs);
    Ok((MixedStrategyPair { row_probs, col_probs, value }, used))
}

fn group_duplicates(n: usize, same: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        match groups.iter_mut().find(|g| same(g[0], i)) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Payoff entries from already-perturbed instance matrices.
///
/// `references` must hold one reference accuracy per column when the metric
/// is max regret.
pub fn payoff_from_applied(
    trees: &[&DecisionTree],
    applied: &[&Matrix],
    references: Option<&[f64]>,
    labels: &[usize],
    metric: MetricKind,
) -> Result<PayoffMatrix> {
    if trees.is_empty() || applied.is_empty() {
        return Err(Error::Empty("payoff needs at least one tree and one perturbation"));
    }
    let m = labels.len() as f64;
    let mut entries = Matrix::zeros(trees.len(), applied.len());
    for (i, t) in trees.iter().enumerate() {
        for (j, z) in applied.iter().enumerate() {
            let acc = correct_count(*t, z, labels) as f64 / m;
            let v = match metric {
                MetricKind::AdversarialAccuracy => acc,
                MetricKind::MaxRegret => {
                    let refs = references.ok_or_else(|| {
                        Error::InvalidArgument("max regret payoff needs reference accuracies".into())
                    })?;
                    -(refs[j] - acc)
                }
            };
            entries.set(i, j, v);
        }
    }
    PayoffMatrix::new(entries)
}

/// Payoff of every tree against every perturbation on `instances`.
/// Reference accuracies are memoized on the perturbations.
pub fn build_payoff(
    trees: &[&DecisionTree],
    perturbations: &mut [Perturbation],
    instances: &Matrix,
    labels: &[usize],
    metric: MetricKind,
    cart: &CartParams,
) -> Result<PayoffMatrix> {
    if trees.is_empty() || perturbations.is_empty() {
        return Err(Error::Empty("payoff needs at least one tree and one perturbation"));
    }
    if instances.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} instances but {} labels",
            instances.rows(),
            labels.len()
        )));
    }
    let applied: Vec<Matrix> =
        perturbations.iter().map(|p| p.apply_to(instances)).collect::<Result<_>>()?;
    let references = match metric {
        MetricKind::AdversarialAccuracy => None,
        MetricKind::MaxRegret => Some(
            perturbations
                .iter_mut()
                .map(|p| reference_accuracy(p, instances, labels, cart))
                .collect::<Result<Vec<f64>>>()?,
        ),
    };
    let refs: Vec<&Matrix> = applied.iter().collect();
    payoff_from_applied(trees, &refs, references.as_deref(), labels, metric)
}
