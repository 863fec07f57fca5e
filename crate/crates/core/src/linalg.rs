//! Dense complex matrix and third-order tensor kernels.
//!
//! Matrices are `nalgebra` column-major dense matrices over `Complex64`.
//! Tensors store their entries with the first index varying fastest, so the
//! mode-n unfoldings below follow the Kolda convention:
//!
//! * mode 1: `U1 · (U3 ⊙ U2)^T`
//! * mode 2: `U2 · (U3 ⊙ U1)^T`
//! * mode 3: `U3 · (U2 ⊙ U1)^T`
//!
//! With this layout, the mode-3 unfolding of a tensor indexed `(y, x, n)`
//! has column `x·d1 + y`, i.e. the y-fastest ordering used by the probe grid.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;

/// Singular values below this fraction of the largest one are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Column-wise Kronecker product of `a` (p×L) and `b` (q×L), giving pq×L.
pub fn khatri_rao(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (p, q) = (a.nrows(), b.nrows());
    let mut out = ComplexMatrix::zeros(p * q, a.ncols());
    for k in 0..a.ncols() {
        for i in 0..p {
            let aik = a[(i, k)];
            for j in 0..q {
                out[(i * q + j, k)] = aik * b[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Standard Kronecker product.
pub fn kronecker(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Moore-Penrose pseudo-inverse via SVD with relative singular-value cutoff
/// [`PINV_RCOND`].
pub fn pseudo_inverse(a: &ComplexMatrix) -> ComplexMatrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return ComplexMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = &svd.singular_values;
    let cutoff = PINV_RCOND * s.max();
    let mut out = ComplexMatrix::zeros(n, m);
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        // A† = V Σ⁺ U^H; row k of v_t is v_k^H.
        for c in 0..m {
            let uc = u[(c, k)].conj() * inv;
            if uc == ZERO {
                continue;
            }
            for r in 0..n {
                out[(r, c)] += v_t[(k, r)].conj() * uc;
            }
        }
    }
    out
}

/// Minimum-norm least-squares solution of `a · x ≈ y`.
pub fn least_squares(a: &ComplexMatrix, y: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "least squares: a has {} rows, y has {}",
            a.nrows(),
            y.nrows()
        )));
    }
    Ok(pseudo_inverse(a) * y)
}

/// Spectral condition number (σ_max / σ_min over the smaller dimension).
pub fn condition_number(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let s = a.clone().singular_values();
    let (max, min) = (s.max(), s.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Column-major vectorization (columns stacked).
pub fn vec_col_major(a: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(a.len(), 1, a.as_slice())
}

/// Inverse of [`vec_col_major`].
pub fn unvec(v: &[Complex64], rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_column_slice(rows, cols, v))
}

pub fn all_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Dense third-order complex tensor, first index fastest in storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor3 {
    dims: [usize; 3],
    data: Vec<Complex64>,
}

impl ComplexTensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![ZERO; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = t.offset(i, j, k);
                    t.data[idx] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Builds a tensor from storage in first-index-fastest order.
    pub fn from_vec(dims: [usize; 3], data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "{} entries do not fill a {:?} tensor",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: Complex64) {
        let idx = self.offset(i, j, k);
        self.data[idx] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Mode-n unfolding, `mode ∈ {1, 2, 3}`.
    pub fn unfold(&self, mode: usize) -> Result<ComplexMatrix> {
        let [d1, d2, d3] = self.dims;
        let mut out = match mode {
            1 => ComplexMatrix::zeros(d1, d2 * d3),
            2 => ComplexMatrix::zeros(d2, d1 * d3),
            3 => ComplexMatrix::zeros(d3, d1 * d2),
            _ => return Err(Error::Argument(format!("unfolding mode must be 1, 2 or 3, got {mode}"))),
        };
        for k in 0..d3 {
            for j in 0..d2 {
                for i in 0..d1 {
                    let v = self.get(i, j, k);
                    match mode {
                        1 => out[(i, j + d2 * k)] = v,
                        2 => out[(j, i + d1 * k)] = v,
                        _ => out[(k, i + d1 * j)] = v,
                    }
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`ComplexTensor3::unfold`].
    pub fn fold(m: &ComplexMatrix, mode: usize, dims: [usize; 3]) -> Result<Self> {
        let [d1, d2, d3] = dims;
        let expected = match mode {
            1 => (d1, d2 * d3),
            2 => (d2, d1 * d3),
            3 => (d3, d1 * d2),
            _ => return Err(Error::Argument(format!("unfolding mode must be 1, 2 or 3, got {mode}"))),
        };
        if m.shape() != expected {
            return Err(Error::Dimension(format!(
                "mode-{mode} unfolding of {dims:?} must be {expected:?}, got {:?}",
                m.shape()
            )));
        }
        Ok(Self::from_fn(dims, |i, j, k| match mode {
            1 => m[(i, j + d2 * k)],
            2 => m[(j, i + d1 * k)],
            _ => m[(k, i + d1 * j)],
        }))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn real(rows: usize, cols: usize, v: &[f64]) -> ComplexMatrix {
        ComplexMatrix::from_row_iterator(rows, cols, v.iter().map(|&x| c(x, 0.0)))
    }

    #[test]
    fn khatri_rao_hand_cases() {
        let ones = real(2, 1, &[1.0, 1.0]);
        assert_eq!(khatri_rao(&ones, &ones).unwrap(), real(4, 1, &[1.0; 4]));

        let a = real(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = real(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let kr = khatri_rao(&a, &b).unwrap();
        assert_eq!(kr, real(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0]));
    }

    #[test]
    fn khatri_rao_rejects_column_mismatch() {
        let a = ComplexMatrix::zeros(2, 2);
        let b = ComplexMatrix::zeros(2, 3);
        assert!(matches!(khatri_rao(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn kronecker_hand_cases() {
        let i2 = ComplexMatrix::identity(2, 2);
        assert_eq!(kronecker(&i2, &i2), ComplexMatrix::identity(4, 4));
        let a = ComplexMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 1.0)]);
        let b = real(1, 2, &[1.0, -1.0]);
        let expect = ComplexMatrix::from_row_slice(1, 4, &[c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0)]);
        assert_eq!(kronecker(&a, &b), expect);
    }

    #[test]
    fn pinv_closed_forms() {
        let i3 = ComplexMatrix::identity(3, 3);
        assert!(rel_err(&pseudo_inverse(&i3), &i3) < 1e-14);

        let v = ComplexMatrix::from_column_slice(3, 1, &[c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0)]);
        let expect = v.adjoint().unscale(v.norm_squared());
        assert!(rel_err(&pseudo_inverse(&v), &expect) < 1e-12);

        let zero = ComplexMatrix::zeros(3, 2);
        assert_eq!(pseudo_inverse(&zero), ComplexMatrix::zeros(2, 3));
    }

    #[test]
    fn pinv_left_inverse_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 5, 3);
        let left = pseudo_inverse(&a) * &a;
        assert!(rel_err(&left, &ComplexMatrix::identity(3, 3)) < 1e-9);
    }

    #[test]
    fn least_squares_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_matrix(&mut rng, 4, 2);
        assert!(rel_err(&least_squares(&ComplexMatrix::identity(4, 4), &y).unwrap(), &y) < 1e-14);

        let a = random_matrix(&mut rng, 8, 3);
        let x0 = random_matrix(&mut rng, 3, 2);
        let x = least_squares(&a, &(&a * &x0)).unwrap();
        assert!(rel_err(&x, &x0) < 1e-10);

        let y = random_matrix(&mut rng, 8, 2);
        let x = least_squares(&a, &y).unwrap();
        let r = &y - &a * &x;
        let normal = a.adjoint() * &r;
        assert!(normal.norm() < 1e-8 * a.norm() * y.norm());

        assert!(least_squares(&a, &random_matrix(&mut rng, 7, 1)).is_err());
    }

    #[test]
    fn unfold_all_ones_and_modes() {
        let t = ComplexTensor3::from_fn([2, 2, 2], |_, _, _| ONE);
        for mode in 1..=3 {
            let u = t.unfold(mode).unwrap();
            assert_eq!(u.shape(), (2, 4));
            assert!(u.iter().all(|&z| z == ONE));
        }
        assert!(matches!(t.unfold(0), Err(Error::Argument(_))));
        assert!(matches!(t.unfold(4), Err(Error::Argument(_))));
    }

    #[test]
    fn unfold_rank_one_against_outer_product() {
        let u1 = [c(1.0, 0.0), c(2.0, 0.0)];
        let u2 = [c(1.0, 0.0), c(0.0, 0.0)];
        let u3 = [c(1.0, 0.0), c(0.0, 1.0)];
        let t = ComplexTensor3::from_fn([2, 2, 2], |i, j, k| u1[i] * u2[j] * u3[k]);
        let m3 = t.unfold(3).unwrap();
        // Row k of the mode-3 unfolding is u3[k] · (u2 ⊗ u1)^T = u3[k]·[1, 2, 0, 0].
        let base = [c(1.0, 0.0), c(2.0, 0.0), ZERO, ZERO];
        for k in 0..2 {
            for col in 0..4 {
                assert_eq!(m3[(k, col)], u3[k] * base[col]);
            }
        }
    }

    #[test]
    fn fold_checks_shape() {
        let m = ComplexMatrix::zeros(3, 5);
        assert!(ComplexTensor3::fold(&m, 1, [3, 2, 2]).is_err());
        assert!(ComplexTensor3::fold(&m, 7, [3, 5, 1]).is_err());
    }
}
