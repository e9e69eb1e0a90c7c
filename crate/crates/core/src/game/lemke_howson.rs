//! Lemke-Howson complementary pivoting for the bimatrix game `(A, -A)`.
//!
//! Labels `0..n` name the row player's pure strategies and `n..n+m` the
//! column player's. The column tableau describes `{y >= 0 : A'y <= 1}` with
//! slacks labelled by rows; the row tableau describes `{x >= 0 : B'ᵀx <= 1}`
//! with slacks labelled by columns. `A'` and `B'` are the payoffs shifted to
//! be strictly positive.

use alloc::vec;
use alloc::vec::Vec;

use super::{MixedStrategyPair, PayoffMatrix};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;

struct Tableau {
    /// One row per basic variable; columns are indexed by label, plus the
    /// right-hand side in the last column.
    cells: Vec<f64>,
    width: usize,
    basis: Vec<usize>,
    /// Labels of the initial slack basis, used as the lexicographic key.
    slack_labels: core::ops::Range<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    /// Lexicographic minimum ratio test for the entering column. `None`
    /// means the column is unbounded, which cannot happen for positive
    /// payoffs.
    fn leaving_row(&self, entering: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for r in 0..self.basis.len() {
            let a = self.at(r, entering);
            if a <= PIVOT_TOL {
                continue;
            }
            best = match best {
                None => Some(r),
                Some(b) if self.lex_less(r, b, entering) => Some(r),
                keep => keep,
            };
        }
        best
    }

    fn lex_less(&self, r: usize, b: usize, entering: usize) -> bool {
        let ar = self.at(r, entering);
        let ab = self.at(b, entering);
        let keys = core::iter::once(self.width - 1).chain(self.slack_labels.clone());
        for c in keys {
            let x = self.at(r, c) / ar;
            let y = self.at(b, c) / ab;
            let scale = 1.0 + x.abs().max(y.abs());
            if (x - y).abs() > 1e-11 * scale {
                return x < y;
            }
        }
        false
    }

    /// Brings `entering` into the basis; returns the label that left.
    fn pivot(&mut self, entering: usize) -> Option<usize> {
        let r = self.leaving_row(entering)?;
        let w = self.width;
        let p = self.at(r, entering);
        for c in 0..w {
            self.cells[r * w + c] /= p;
        }
        for other in 0..self.basis.len() {
            if other == r {
                continue;
            }
            let factor = self.at(other, entering);
            if factor == 0.0 {
                continue;
            }
            for c in 0..w {
                let v = self.cells[r * w + c];
                self.cells[other * w + c] -= factor * v;
            }
            self.cells[other * w + entering] = 0.0;
        }
        let left = self.basis[r];
        self.basis[r] = entering;
        Some(left)
    }

    fn is_basic(&self, label: usize) -> bool {
        self.basis.contains(&label)
    }

    /// Values of the variables with labels in `labels`, normalized to sum 1.
    fn strategy(&self, labels: core::ops::Range<usize>) -> Vec<f64> {
        let start = labels.start;
        let mut out = vec![0.0; labels.len()];
        for (r, &b) in self.basis.iter().enumerate() {
            if labels.contains(&b) {
                out[b - start] = self.rhs(r).max(0.0);
            }
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|v| *v /= total);
        }
        out
    }
}

fn shift_to_positive(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let min = values.fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        1.0 + min.abs()
    } else {
        0.0
    }
}

/// One mixed Nash equilibrium of the zero-sum game with row payoffs `A`,
/// starting from the row player's first pure strategy.
pub fn lemke_howson(a: &PayoffMatrix) -> Result<MixedStrategyPair> {
    let n = a.rows();
    let m = a.cols();
    for i in 0..n {
        for j in 0..m {
            if !a.get(i, j).is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    let total = n + m;
    let width = total + 1;
    let flat = a.entries().as_slice();
    let shift_a = shift_to_positive(flat.iter().copied());
    let shift_b = shift_to_positive(flat.iter().map(|v| -v));

    // Column player's polytope: A'y + s = 1, basis = row slacks.
    let mut col = Tableau {
        cells: vec![0.0; n * width],
        width,
        basis: (0..n).collect(),
        slack_labels: 0..n,
    };
    for i in 0..n {
        for j in 0..m {
            col.cells[i * width + n + j] = a.get(i, j) + shift_a;
        }
        col.cells[i * width + i] = 1.0;
        col.cells[i * width + total] = 1.0;
    }
    // Row player's polytope: B'ᵀx + t = 1, basis = column slacks.
    let mut row = Tableau {
        cells: vec![0.0; m * width],
        width,
        basis: (n..total).collect(),
        slack_labels: n..total,
    };
    for j in 0..m {
        for i in 0..n {
            row.cells[j * width + i] = -a.get(i, j) + shift_b;
        }
        row.cells[j * width + n + j] = 1.0;
        row.cells[j * width + total] = 1.0;
    }

    let missing = 0usize;
    let max_pivots = 10_000 + 100 * total;
    let mut entering = missing;
    let mut in_row_tableau = !row.is_basic(missing);
    let mut pivots = 0;
    loop {
        let tableau = if in_row_tableau { &mut row } else { &mut col };
        let left = tableau.pivot(entering).ok_or(Error::PivotCycle { pivots })?;
        pivots += 1;
        if left == missing {
            break;
        }
        if pivots >= max_pivots {
            return Err(Error::PivotCycle { pivots });
        }
        entering = left;
        in_row_tableau = !in_row_tableau;
    }

    let row_probs = row.strategy(0..n);
    let col_probs = col.strategy(n..total);
    if row_probs.iter().sum::<f64>() == 0.0 || col_probs.iter().sum::<f64>() == 0.0 {
        return Err(Error::PivotCycle { pivots });
    }
    let value = a.expected(&row_probs, &col_probs);
    Ok(MixedStrategyPair { row_probs, col_probs, value })
}
