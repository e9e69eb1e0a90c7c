//! Adversarial perturbations: one additive delta per (instance, feature)
//! cell, bounded by `epsilon` in absolute value.

use alloc::format;

use rand::Rng;

use crate::data::BootstrapView;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    deltas: Matrix,
    epsilon: f64,
    reference_accuracy: Option<f64>,
}

impl Perturbation {
    pub fn new(deltas: Matrix, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be finite and >= 0")));
        }
        if let Some(v) = deltas.as_slice().iter().find(|v| v.is_nan() || v.abs() > epsilon) {
            return Err(Error::InvalidArgument(format!("delta {v} outside [-{epsilon}, {epsilon}]")));
        }
        Ok(Self { deltas, epsilon, reference_accuracy: None })
    }

    pub fn zero(rows: usize, cols: usize, epsilon: f64) -> Self {
        Self { deltas: Matrix::zeros(rows, cols), epsilon, reference_accuracy: None }
    }

    pub fn deltas(&self) -> &Matrix {
        &self.deltas
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rows(&self) -> usize {
        self.deltas.rows()
    }

    pub fn cols(&self) -> usize {
        self.deltas.cols()
    }

    pub fn cached_reference_accuracy(&self) -> Option<f64> {
        self.reference_accuracy
    }

    /// Stores the memoized best-response accuracy. Values outside `[0, 1]`
    /// are rejected.
    pub fn set_reference_accuracy(&mut self, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!("reference accuracy {value} outside [0, 1]")));
        }
        self.reference_accuracy = Some(value);
        Ok(())
    }

    pub fn clear_reference_accuracy(&mut self) {
        self.reference_accuracy = None;
    }

    /// Same deltas, ignoring the memoized reference accuracy.
    pub fn same_deltas(&self, other: &Perturbation) -> bool {
        self.epsilon == other.epsilon && self.deltas == other.deltas
    }

    /// Perturbed copy of `instances`, clamped to the unit cube.
    pub fn apply_to(&self, instances: &Matrix) -> Result<Matrix> {
        if instances.rows() != self.rows() || instances.cols() != self.cols() {
            return Err(Error::Shape(format!(
                "perturbation is {}x{}, instances are {}x{}",
                self.rows(),
                self.cols(),
                instances.rows(),
                instances.cols()
            )));
        }
        let mut out = instances.clone();
        for (z, d) in out.as_mut_slice().iter_mut().zip(self.deltas.as_slice()) {
            *z = (*z + d).clamp(0.0, 1.0);
        }
        Ok(out)
    }

    pub fn apply(&self, view: &BootstrapView) -> Result<Matrix> {
        self.apply_to(view.instances())
    }
}

/// Every delta drawn i.i.d. uniform on `[-epsilon, epsilon]`.
pub fn sample_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, epsilon: f64, rng: &mut R) -> Perturbation {
    let mut deltas = Matrix::zeros(rows, cols);
    for v in deltas.as_mut_slice() {
        *v = uniform_delta(epsilon, rng);
    }
    Perturbation { deltas, epsilon, reference_accuracy: None }
}

#[inline]
fn uniform_delta<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> f64 {
    if epsilon == 0.0 {
        0.0
    } else {
        (2.0 * rng.random::<f64>() - 1.0) * epsilon
    }
}

/// Each cell is redrawn with probability 1/2.
pub fn mutate_perturbation<R: Rng + ?Sized>(p: &Perturbation, rng: &mut R) -> Perturbation {
    let mut deltas = p.deltas.clone();
    for v in deltas.as_mut_slice() {
        if rng.random_bool(0.5) {
            *v = uniform_delta(p.epsilon, rng);
        }
    }
    Perturbation { deltas, epsilon: p.epsilon, reference_accuracy: None }
}

/// Row-wise uniform crossover: a fair coin per instance decides which child
/// inherits which parent's row.
pub fn crossover_perturbations<R: Rng + ?Sized>(
    a: &Perturbation,
    b: &Perturbation,
    rng: &mut R,
) -> Result<(Perturbation, Perturbation)> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "cannot cross {}x{} with {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.epsilon != b.epsilon {
        return Err(Error::InvalidArgument(format!(
            "epsilon mismatch: {} vs {}",
            a.epsilon, b.epsilon
        )));
    }
    let mut first = a.deltas.clone();
    let mut second = b.deltas.clone();
    for i in 0..a.rows() {
        if rng.random_bool(0.5) {
            first.row_mut(i).copy_from_slice(b.deltas.row(i));
            second.row_mut(i).copy_from_slice(a.deltas.row(i));
        }
    }
    Ok((
        Perturbation { deltas: first, epsilon: a.epsilon, reference_accuracy: None },
        Perturbation { deltas: second, epsilon: a.epsilon, reference_accuracy: None },
    ))
}
