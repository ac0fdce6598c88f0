//! Replication summaries and the in-sample error against true surfaces.

use std::collections::HashMap;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::plan::Method;
use super::run::{FailureRow, ResultRow, TimingRow};
use crate::datagen::CovariateModel;
use crate::error::{Error, Result};
use crate::estimators::EstimatorMode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    pub count: usize,
    pub mean: f64,
    /// `mean(τ̂) − τ`
    pub bias: f64,
    /// `mean((τ̂ − τ)²)`
    pub mse: f64,
    /// Population variance of `τ̂`, so that `mse = bias² + variance`.
    pub variance: f64,
    /// Monte Carlo standard error of `mse`.
    pub mse_se: f64,
}

/// `None` for an empty group.
pub fn group_metrics(estimates: &[f64], tau: f64) -> Option<GroupMetrics> {
    if estimates.is_empty() {
        return None;
    }
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let sq: Vec<f64> = estimates.iter().map(|t| (t - tau).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / r;
    let variance = estimates.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / r;
    let mse_se = if estimates.len() > 1 {
        (sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt()
    } else {
        0.0
    };
    Some(GroupMetrics {
        count: estimates.len(),
        mean,
        bias: mean - tau,
        mse,
        variance,
        mse_se,
    })
}

/// One row of `summary.csv`: a scenario × method × estimator group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub covariate_model: CovariateModel,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub missing_prob: f64,
    pub snr: f64,
    pub tau: f64,
    pub method: Method,
    pub estimator: EstimatorMode,
    pub completed: usize,
    pub failed: usize,
    pub mean_tau_hat: f64,
    pub bias: f64,
    pub mse: f64,
    pub sd: f64,
    pub mse_se: f64,
    pub mean_runtime_secs: Option<f64>,
}

type GroupKey = (String, Method, EstimatorMode);

/// Groups rows by scenario, method and estimator in order of first
/// appearance. Timings are optional; failures only feed the counts.
pub fn summarize(results: &[ResultRow], timings: &[TimingRow], failures: &[FailureRow]) -> Vec<SummaryRow> {
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: HashMap<GroupKey, Vec<&ResultRow>> = HashMap::new();
    for row in results {
        let key = (row.scenario.clone(), row.method, row.estimator);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(row);
    }
    let mut runtime: HashMap<GroupKey, Vec<f64>> = HashMap::new();
    for t in timings {
        runtime
            .entry((t.scenario.clone(), t.method, t.estimator))
            .or_default()
            .push(t.runtime_secs);
    }
    for f in failures {
        let orphan = match f.estimator {
            Some(e) => !groups.contains_key(&(f.scenario.clone(), f.method, e)),
            None => !groups.keys().any(|k| k.0 == f.scenario && k.1 == f.method),
        };
        if orphan {
            log::warn!("{} {}: no successful replications, group omitted", f.scenario, f.method);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let first = rows[0];
            let taus: Vec<f64> = rows.iter().map(|r| r.tau_hat).collect();
            let m = group_metrics(&taus, first.tau).expect("groups are non-empty");
            let failed = failures
                .iter()
                .filter(|f| f.scenario == key.0 && f.method == key.1 && f.estimator.is_none_or(|e| e == key.2))
                .count();
            let mean_runtime_secs = runtime
                .get(&key)
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            SummaryRow {
                scenario: key.0.clone(),
                covariate_model: first.covariate_model,
                n: first.n,
                p: first.p,
                d: first.d,
                missing_prob: first.missing_prob,
                snr: first.snr,
                tau: first.tau,
                method: key.1,
                estimator: key.2,
                completed: m.count,
                failed,
                mean_tau_hat: m.mean,
                bias: m.bias,
                mse: m.mse,
                sd: m.variance.sqrt(),
                mse_se: m.mse_se,
                mean_runtime_secs,
            }
        })
        .collect()
}

/// `Δ = |τ̂ − (1/n) Σ (μ₁(xᵢ) − μ₀(xᵢ))|`
pub fn in_sample_delta(tau_hat: f64, mu1: ArrayView1<f64>, mu0: ArrayView1<f64>) -> Result<f64> {
    if mu1.is_empty() || mu1.len() != mu0.len() {
        return Err(Error::InvalidInput(format!(
            "response surfaces need equal non-zero lengths, got {} and {}",
            mu1.len(),
            mu0.len()
        )));
    }
    let sample_ate = (&mu1 - &mu0).mean().expect("non-empty");
    Ok((tau_hat - sample_ate).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn exact_estimates() {
        let m = group_metrics(&[1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!((m.bias, m.mse), (0.0, 0.0));
    }

    #[test]
    fn hand_arithmetic() {
        let m = group_metrics(&[0.0, 2.0], 1.0).unwrap();
        assert_eq!((m.bias, m.mse, m.variance), (0.0, 1.0, 1.0));
        assert!(group_metrics(&[], 1.0).is_none());
    }

    #[test]
    fn delta_examples() {
        let mu1 = array![5.0, 6.0];
        let mu0 = array![1.0, 2.0];
        assert_eq!(in_sample_delta(4.0, mu1.view(), mu0.view()).unwrap(), 0.0);
        assert_eq!(in_sample_delta(4.5, mu1.view(), mu0.view()).unwrap(), 0.5);
        assert!(in_sample_delta(1.0, array![1.0].view(), mu0.view()).is_err());
    }

    proptest! {
        #[test]
        fn mse_decomposes(taus in prop::collection::vec(-50.0f64..50.0, 1..40), tau in -5.0f64..5.0) {
            let m = group_metrics(&taus, tau).unwrap();
            prop_assert!((m.mse - (m.bias * m.bias + m.variance)).abs() <= 1e-12 * m.mse.max(1.0));
        }

        #[test]
        fn delta_permutation_invariant(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30), shift in 0usize..30) {
            let mu1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mu0: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let k = shift % pairs.len();
            let rot = |v: &Vec<f64>| { let mut r = v.clone(); r.rotate_left(k); ndarray::Array1::from(r) };
            let a = in_sample_delta(0.3, ndarray::Array1::from(mu1.clone()).view(), ndarray::Array1::from(mu0.clone()).view()).unwrap();
            let b = in_sample_delta(0.3, rot(&mu1).view(), rot(&mu0).view()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
