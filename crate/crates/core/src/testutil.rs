use rand::Rng;

use crate::linalg::ComplexMatrix;
use crate::rng::complex_gaussian;

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng, 1.0))
}

pub fn rel_err(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
