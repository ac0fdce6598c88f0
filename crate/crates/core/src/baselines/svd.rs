//! Thin singular value decomposition with singular values in decreasing
//! order, on top of `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

/// `A = U diag(s) Vᵀ` with `U: n×k`, `s` descending, `V: p×k`,
/// `k = min(n, p)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

impl Svd {
    pub fn reconstruct(&self) -> Array2<f64> {
        (&self.u * &self.s).dot(&self.v.t())
    }
}

pub fn svd(a: &Array2<f64>) -> Svd {
    let (n, p) = a.dim();
    let k = n.min(p);
    if k == 0 {
        return Svd {
            u: Array2::zeros((n, 0)),
            s: Array1::zeros(0),
            v: Array2::zeros((p, 0)),
        };
    }
    let m = DMatrix::from_row_iterator(n, p, a.iter().copied());
    let dec = m.svd(true, true);
    let (u, v_t) = (dec.u.expect("U requested"), dec.v_t.expect("Vᵀ requested"));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    Svd {
        u: Array2::from_shape_fn((n, k), |(i, c)| u[(i, order[c])]),
        s: Array1::from_shape_fn(k, |c| dec.singular_values[order[c]]),
        v: Array2::from_shape_fn((p, k), |(j, c)| v_t[(order[c], j)]),
    }
}
