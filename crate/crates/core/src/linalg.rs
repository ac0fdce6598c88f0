//! Dense symmetric solves used by the ridge and Newton fits.

use nalgebra::{DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Gram matrix counts as singular.
const PIVOT_TOL: f64 = 1e-11;

/// Cholesky factorization of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    inner: nalgebra::Cholesky<f64, Dyn>,
}

impl Cholesky {
    /// Fails with [`Error::RankDeficient`] when a pivot falls below
    /// `PIVOT_TOL` times its own diagonal entry.
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                context: "cholesky (square)",
                expected: n,
                found: a.ncols(),
            });
        }
        let m = DMatrix::from_row_iterator(n, n, a.iter().copied());
        let inner = nalgebra::Cholesky::new(m)
            .ok_or_else(|| Error::RankDeficient("matrix is not positive definite".into()))?;
        let l = inner.l_dirty();
        for j in 0..n {
            let (pivot, scale) = (l[(j, j)] * l[(j, j)], a[[j, j]]);
            if !(scale > 0.0 && pivot > PIVOT_TOL * scale) {
                return Err(Error::RankDeficient(format!(
                    "pivot {j} is {pivot:.3e} (diagonal {scale:.3e})"
                )));
            }
        }
        Ok(Cholesky { inner })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let x = self.inner.solve(&DVector::from_iterator(b.len(), b.iter().copied()));
        Array1::from_iter(x.iter().copied())
    }

    /// Diagonal of the inverse matrix.
    pub fn inverse_diagonal(&self) -> Array1<f64> {
        Array1::from_iter(self.inner.inverse().diagonal().iter().copied())
    }
}

/// Prepends a column of ones.
pub fn with_intercept(features: &Array2<f64>) -> Array2<f64> {
    let (n, q) = features.dim();
    let mut design = Array2::ones((n, q + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(features);
    design
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let x = Cholesky::factor(&a).unwrap().solve(&array![2.0, 1.0]);
        // 4x + 2y = 2, 2x + 3y = 1 → x = 0.5, y = 0
        assert!((x[0] - 0.5).abs() < 1e-14 && x[1].abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_rank_deficient() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(Cholesky::factor(&a), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn inverse_diagonal_matches_closed_form() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let inv = Cholesky::factor(&a).unwrap().inverse_diagonal();
        assert!((inv[0] - 3.0 / 8.0).abs() < 1e-14);
        assert!((inv[1] - 4.0 / 8.0).abs() < 1e-14);
    }
}
