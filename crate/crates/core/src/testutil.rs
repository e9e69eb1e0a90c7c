use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::matrix::Matrix;
use crate::rng::seeded;

/// Points in the unit square labelled by which side of x0 + x1 = 1 they fall on.
pub(crate) fn diagonal(m: usize, seed: u64) -> Arc<Dataset> {
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(2 * m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        data.extend([a, b]);
        labels.push(usize::from(a + b > 1.0));
    }
    let instances = Matrix::from_vec(m, 2, data).unwrap();
    Arc::new(Dataset::new("diag", vec!["x0".to_string(), "x1".to_string()], instances, labels, 2).unwrap())
}
