use super::aipw::{AteEstimate, Z_975};
use crate::error::{Error, Result};

/// Combines per-draw estimates with Rubin's rules.
///
/// `τ̂` is the mean estimate, `W̄` the mean within-draw variance, `B̂` the
/// sample variance of the estimates, and the total variance is
/// `W̄ + (1 + 1/B)·B̂`. The 95% interval uses normal quantiles.
pub fn rubin_aggregate(estimates: &[f64], within_variances: &[f64]) -> Result<AteEstimate> {
    let b = estimates.len();
    if b == 0 {
        return Err(Error::InvalidInput("no estimates to aggregate".into()));
    }
    if within_variances.len() != b {
        return Err(Error::Dimension {
            context: "within variances",
            expected: b,
            found: within_variances.len(),
        });
    }
    if within_variances.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("within variances must be ≥ 0".into()));
    }
    let bf = b as f64;
    let tau = estimates.iter().sum::<f64>() / bf;
    let within = within_variances.iter().sum::<f64>() / bf;
    let between = if b > 1 {
        estimates.iter().map(|e| (e - tau).powi(2)).sum::<f64>() / (bf - 1.0)
    } else {
        0.0
    };
    let total = within + (1.0 + 1.0 / bf) * between;
    let half = Z_975 * total.sqrt();
    Ok(AteEstimate {
        tau_hat: tau,
        per_draw: estimates.to_vec(),
        within_variance: within,
        between_variance: between,
        total_variance: total,
        ci_95: (tau - half, tau + half),
    })
}

/// Aggregates single-draw estimates (each carrying its own within variance).
pub fn aggregate_draws(draws: &[AteEstimate]) -> Result<AteEstimate> {
    let est: Vec<f64> = draws.iter().map(|d| d.tau_hat).collect();
    let within: Vec<f64> = draws.iter().map(|d| d.within_variance).collect();
    rubin_aggregate(&est, &within)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let r = rubin_aggregate(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.tau_hat, 1.0);
        assert_eq!(r.between_variance, 2.0);
        assert_eq!(r.total_variance, 4.0);
    }

    #[test]
    fn equal_estimates() {
        let r = rubin_aggregate(&[0.7; 4], &[0.25; 4]).unwrap();
        assert_eq!(r.tau_hat, 0.7);
        assert_eq!(r.total_variance, 0.25);
        assert!((r.ci_95.0 - (0.7 - Z_975 * 0.5)).abs() < 1e-15);
        assert!((r.ci_95.1 - (0.7 + Z_975 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn single_draw_is_within_variance() {
        let r = rubin_aggregate(&[3.0], &[0.4]).unwrap();
        assert_eq!((r.tau_hat, r.total_variance, r.between_variance), (3.0, 0.4, 0.0));
    }

    #[test]
    fn empty_is_rejected() {
        assert!(rubin_aggregate(&[], &[]).is_err());
        assert!(rubin_aggregate(&[1.0], &[-1.0]).is_err());
    }

    proptest! {
        #[test]
        fn total_dominates_within(
            pairs in proptest::collection::vec((-10.0f64..10.0, 0.0f64..5.0), 1..30)
        ) {
            let est: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let within: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = rubin_aggregate(&est, &within).unwrap();
            prop_assert!(r.total_variance >= r.within_variance);
            prop_assert!(r.ci_95.0 <= r.tau_hat && r.tau_hat <= r.ci_95.1);
        }
    }
}
