use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// `ln(2π)`.
pub const LOG_2PI: f64 = 1.837_877_066_409_345_5;

pub const LOG_VARIANCE_MIN: f64 = -10.0;
pub const LOG_VARIANCE_MAX: f64 = 10.0;

/// Diagonal Gaussian parameterized by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Array1<f64>,
    pub log_variance: Array1<f64>,
}

impl GaussianHead {
    /// Builds a head, clamping log-variances into `[LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]`.
    pub fn new(mean: Array1<f64>, log_variance: Array1<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::Dimension {
                context: "gaussian head",
                expected: mean.len(),
                found: log_variance.len(),
            });
        }
        if !mean.iter().chain(log_variance.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian head parameters".into()));
        }
        let log_variance = log_variance.mapv(|v| v.clamp(LOG_VARIANCE_MIN, LOG_VARIANCE_MAX));
        Ok(GaussianHead { mean, log_variance })
    }

    /// Splits a network output row `[mean (m) | log-variance (m)]`.
    pub fn from_output(row: ArrayView1<f64>) -> Result<Self> {
        if row.len() % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "gaussian head output has odd width {}",
                row.len()
            )));
        }
        let m = row.len() / 2;
        GaussianHead::new(
            row.slice(ndarray::s![..m]).to_owned(),
            row.slice(ndarray::s![m..]).to_owned(),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Array1<f64> {
        self.log_variance.mapv(f64::exp)
    }
}

/// Univariate normal log-density with the variance given on the log scale.
#[inline]
pub fn log_normal(x: f64, mean: f64, log_variance: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LOG_2PI + log_variance + r * r * (-log_variance).exp())
}

/// `Σ_k log N(x_k; μ_k, σ²_k)` for a diagonal Gaussian.
pub fn gaussian_log_density(x: ArrayView1<f64>, head: &GaussianHead) -> Result<f64> {
    if x.len() != head.dim() {
        return Err(Error::Dimension {
            context: "gaussian log density",
            expected: head.dim(),
            found: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gaussian log density argument".into()));
    }
    Ok(x
        .iter()
        .zip(head.mean.iter().zip(head.log_variance.iter()))
        .map(|(&xi, (&mu, &lv))| log_normal(xi, mu, lv))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_mode() {
        let head = GaussianHead::new(array![0.0], array![0.0]).unwrap();
        let v = gaussian_log_density(array![0.0].view(), &head).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        let v = gaussian_log_density(array![1.0].view(), &head).unwrap();
        assert!((v - (-1.418_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn log_variance_is_clamped() {
        let head = GaussianHead::new(array![0.0, 0.0], array![-50.0, 50.0]).unwrap();
        assert_eq!(head.log_variance, array![LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]);
        assert!(head.variance().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_non_finite() {
        let head = GaussianHead::new(array![0.0], array![0.0]).unwrap();
        assert!(gaussian_log_density(array![f64::NAN].view(), &head).is_err());
        assert!(GaussianHead::new(array![f64::INFINITY], array![0.0]).is_err());
    }

    fn univariate(x: f64, mu: f64, var: f64) -> f64 {
        let pi = std::f64::consts::PI;
        -0.5 * (2.0 * pi).ln() - 0.5 * var.ln() - (x - mu).powi(2) / (2.0 * var)
    }

    proptest! {
        #[test]
        fn density_factorizes_over_coordinates(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.05f64..20.0), 1..8)
        ) {
            let x: Array1<f64> = rows.iter().map(|r| r.0).collect();
            let mu: Array1<f64> = rows.iter().map(|r| r.1).collect();
            let lv: Array1<f64> = rows.iter().map(|r| r.2.ln()).collect();
            let head = GaussianHead::new(mu, lv).unwrap();
            let joint = gaussian_log_density(x.view(), &head).unwrap();
            let sum: f64 = rows.iter().map(|&(x, m, v)| univariate(x, m, v)).sum();
            prop_assert!((joint - sum).abs() < 1e-9 * (1.0 + sum.abs()));
        }
    }
}
