//! Independent zero-sum solver used to cross-check Lemke-Howson and as its
//! fallback. It shares no code with the pivoting solver.
//!
//! * one row or one column: pure best responses;
//! * two rows or two columns: lower envelope of payoff lines;
//! * up to 8x8: exhaustive enumeration of the vertices of the maximin LP;
//! * larger: fictitious play until the duality gap is below `1e-6`.

use alloc::vec;
use alloc::vec::Vec;

use super::{MixedStrategyPair, PayoffMatrix};
use crate::error::{Error, Result};

const VALUE_TOL: f64 = 1e-6;
const ENUMERATION_LIMIT: usize = 8;
const FICTITIOUS_PLAY_ITERATIONS: usize = 2_000_000;

pub fn solve_zero_sum_oracle(a: &PayoffMatrix) -> Result<MixedStrategyPair> {
    let (n, m) = (a.rows(), a.cols());
    if n == 0 || m == 0 {
        return Err(Error::Empty("payoff matrix"));
    }
    if n == 1 || m == 1 {
        return Ok(pure_solution(a));
    }
    if n == 2 || m == 2 || (n <= ENUMERATION_LIMIT && m <= ENUMERATION_LIMIT) {
        let (row_probs, lower) = maximin(a);
        let (col_probs, upper) = maximin(&a.transpose_negated());
        let upper = -upper;
        if (upper - lower).abs() > VALUE_TOL {
            return Err(Error::NotConverged { gap: upper - lower, tol: VALUE_TOL });
        }
        let value = a.expected(&row_probs, &col_probs);
        return Ok(MixedStrategyPair { row_probs, col_probs, value });
    }
    fictitious_play(a)
}

fn pure_solution(a: &PayoffMatrix) -> MixedStrategyPair {
    let (n, m) = (a.rows(), a.cols());
    if n == 1 {
        let (j, v) = (0..m).map(|j| (j, a.get(0, j))).fold((0, f64::INFINITY), |best, c| {
            if c.1 < best.1 { c } else { best }
        });
        MixedStrategyPair::pure(1, 0, m, j, v)
    } else {
        let (i, v) = (0..n).map(|i| (i, a.get(i, 0))).fold((0, f64::NEG_INFINITY), |best, c| {
            if c.1 > best.1 { c } else { best }
        });
        MixedStrategyPair::pure(n, i, 1, 0, v)
    }
}

/// Optimal row mixture and its guaranteed payoff.
fn maximin(a: &PayoffMatrix) -> (Vec<f64>, f64) {
    if a.rows() == 2 {
        two_row_envelope(a)
    } else if a.rows() == 1 {
        (vec![1.0], (0..a.cols()).map(|j| a.get(0, j)).fold(f64::INFINITY, f64::min))
    } else {
        vertex_enumeration(a)
    }
}

fn guarantee(a: &PayoffMatrix, x: &[f64]) -> f64 {
    (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| x[i] * a.get(i, j)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// With two rows the guarantee `min_j (p a_0j + (1-p) a_1j)` is concave and
/// piecewise linear in `p`; its maximum sits at an endpoint or a crossing.
fn two_row_envelope(a: &PayoffMatrix) -> (Vec<f64>, f64) {
    let m = a.cols();
    let mut candidates = vec![0.0, 1.0];
    for j in 0..m {
        for k in j + 1..m {
            // p * (a0j - a1j) + a1j = p * (a0k - a1k) + a1k
            let slope = (a.get(0, j) - a.get(1, j)) - (a.get(0, k) - a.get(1, k));
            if slope.abs() > 1e-15 {
                let p = (a.get(1, k) - a.get(1, j)) / slope;
                if p > 0.0 && p < 1.0 {
                    candidates.push(p);
                }
            }
        }
    }
    let mut best = (vec![1.0, 0.0], f64::NEG_INFINITY);
    for p in candidates {
        let x = vec![p, 1.0 - p];
        let g = guarantee(a, &x);
        if g > best.1 {
            best = (x, g);
        }
    }
    best
}

/// Enumerates vertices of `max v s.t. xᵀA >= v, sum x = 1, x >= 0`: a row
/// support `S` and an equally sized set `T` of tight columns determine
/// `(x_S, v)` through a square linear system.
fn vertex_enumeration(a: &PayoffMatrix) -> (Vec<f64>, f64) {
    let (n, m) = (a.rows(), a.cols());
    let mut best = (vec![0.0; n], f64::NEG_INFINITY);
    for k in 1..=n.min(m) {
        for rows in subsets(n, k) {
            for cols in subsets(m, k) {
                let Some(sol) = solve_support(a, &rows, &cols) else { continue };
                let (xs, v) = sol.split_at(k);
                if xs.iter().any(|&p| p < -1e-12) {
                    continue;
                }
                let mut x = vec![0.0; n];
                for (&i, &p) in rows.iter().zip(xs) {
                    x[i] = p.max(0.0);
                }
                let g = guarantee(a, &x);
                if g < v[0] - 1e-9 {
                    continue;
                }
                if g > best.1 {
                    best = (x, g);
                }
            }
        }
    }
    best
}

/// Solves `sum_{i in S} x_i a_ij - v = 0 (j in T)`, `sum x_i = 1` by
/// Gaussian elimination with partial pivoting.
fn solve_support(a: &PayoffMatrix, rows: &[usize], cols: &[usize]) -> Option<Vec<f64>> {
    let k = rows.len();
    let size = k + 1;
    let mut sys = vec![0.0; size * (size + 1)];
    let w = size + 1;
    for (e, &j) in cols.iter().enumerate() {
        for (u, &i) in rows.iter().enumerate() {
            sys[e * w + u] = a.get(i, j);
        }
        sys[e * w + k] = -1.0;
    }
    for u in 0..k {
        sys[k * w + u] = 1.0;
    }
    sys[k * w + size] = 1.0;

    for col in 0..size {
        let pivot = (col..size).max_by(|&p, &q| sys[p * w + col].abs().total_cmp(&sys[q * w + col].abs()))?;
        if sys[pivot * w + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for c in 0..w {
                sys.swap(pivot * w + c, col * w + c);
            }
        }
        let p = sys[col * w + col];
        for r in 0..size {
            if r == col {
                continue;
            }
            let f = sys[r * w + col] / p;
            if f != 0.0 {
                for c in col..w {
                    sys[r * w + c] -= f * sys[col * w + c];
                }
            }
        }
    }
    Some((0..size).map(|r| sys[r * w + size] / sys[r * w + r]).collect())
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut current: Option<Vec<usize>> = if k <= n { Some((0..k).collect()) } else { None };
    core::iter::from_fn(move || {
        let out = current.clone()?;
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                current = None;
                break;
            }
            i -= 1;
            if next[i] < n - k + i {
                next[i] += 1;
                for t in i + 1..k {
                    next[t] = next[t - 1] + 1;
                }
                current = Some(next);
                break;
            }
        }
        Some(out)
    })
}

/// Brown-Robinson fictitious play. The empirical mixtures bracket the value
/// between `min_j (x̄ᵀA)_j` and `max_i (A ȳ)_i`.
fn fictitious_play(a: &PayoffMatrix) -> Result<MixedStrategyPair> {
    let (n, m) = (a.rows(), a.cols());
    let mut row_counts = vec![0u64; n];
    let mut col_counts = vec![0u64; m];
    // cumulative payoffs against the opponent's history
    let mut row_gain = vec![0.0; n];
    let mut col_loss = vec![0.0; m];
    let mut best_gap = f64::INFINITY;
    let mut row = 0usize;
    for t in 1..=FICTITIOUS_PLAY_ITERATIONS {
        row_counts[row] += 1;
        for j in 0..m {
            col_loss[j] += a.get(row, j);
        }
        let col = argmin(&col_loss);
        col_counts[col] += 1;
        for i in 0..n {
            row_gain[i] += a.get(i, col);
        }
        row = argmax(&row_gain);
        if t % 64 == 0 || t == FICTITIOUS_PLAY_ITERATIONS {
            let lower = col_loss.iter().copied().fold(f64::INFINITY, f64::min) / t as f64;
            let upper = row_gain.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t as f64;
            best_gap = best_gap.min(upper - lower);
            if upper - lower <= VALUE_TOL {
                let total = t as f64;
                let row_probs: Vec<f64> = row_counts.iter().map(|&c| c as f64 / total).collect();
                let col_probs: Vec<f64> = col_counts.iter().map(|&c| c as f64 / total).collect();
                let value = a.expected(&row_probs, &col_probs);
                return Ok(MixedStrategyPair { row_probs, col_probs, value });
            }
        }
    }
    Err(Error::NotConverged { gap: best_gap, tol: VALUE_TOL })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::verify_equilibrium;
    use crate::rng::seeded;
    use rand::Rng;

    fn random(n: usize, m: usize, rng: &mut impl Rng) -> PayoffMatrix {
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        PayoffMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_row_is_pure() {
        let a = PayoffMatrix::from_rows(&[[0.4, -0.2, 0.9]]).unwrap();
        let s = solve_zero_sum_oracle(&a).unwrap();
        assert_eq!(s.col_probs, vec![0.0, 1.0, 0.0]);
        assert_eq!(s.value, -0.2);
    }

    #[test]
    fn matching_pennies_value() {
        let a = PayoffMatrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap();
        let s = solve_zero_sum_oracle(&a).unwrap();
        assert!(s.value.abs() < 1e-6);
        assert!(verify_equilibrium(&a, &s, 1e-9));
    }

    #[test]
    fn subsets_enumerate_binomials() {
        assert_eq!(subsets(4, 2).count(), 6);
        assert_eq!(subsets(8, 4).count(), 70);
        assert_eq!(subsets(3, 3).collect::<Vec<_>>(), vec![vec![0, 1, 2]]);
        assert_eq!(subsets(2, 3).count(), 0);
    }

    #[test]
    fn duality_of_transposed_negated_game() {
        let mut rng = seeded(31);
        for _ in 0..200 {
            let a = random(4, 4, &mut rng);
            let v = solve_zero_sum_oracle(&a).unwrap().value;
            let w = solve_zero_sum_oracle(&a.transpose_negated()).unwrap().value;
            assert!((v + w).abs() < 1e-9, "{v} {w}");
        }
    }

    #[test]
    fn small_games_verify() {
        let mut rng = seeded(32);
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let a = random(n, m, &mut rng);
            let s = solve_zero_sum_oracle(&a).unwrap();
            assert!(verify_equilibrium(&a, &s, 1e-9), "{n}x{m}");
        }
    }

    #[test]
    fn fictitious_play_brackets_value() {
        // rock-paper-scissors padded to 9x9 forces the iterative path
        let mut rows = vec![vec![0.0; 9]; 9];
        for i in 0..9 {
            for j in 0..9 {
                rows[i][j] = match (i % 3 + 3 - j % 3) % 3 {
                    0 => 0.0,
                    1 => 1.0,
                    _ => -1.0,
                };
            }
        }
        let a = PayoffMatrix::from_rows(&rows).unwrap();
        match fictitious_play(&a) {
            Ok(s) => assert!(s.value.abs() < 1e-3),
            Err(Error::NotConverged { gap, .. }) => assert!(gap > 0.0),
            Err(e) => panic!("{e}"),
        }
    }
}
