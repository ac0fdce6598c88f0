use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nuisance::{fit_linear, fit_logistic};
use crate::error::{Error, Result};
use crate::linalg::{with_intercept, Cholesky};
use crate::seed;

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// A treatment-effect estimate, possibly aggregated over several draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub tau_hat: f64,
    pub per_draw: Vec<f64>,
    pub within_variance: f64,
    pub between_variance: f64,
    pub total_variance: f64,
    pub ci_95: (f64, f64),
}

impl AteEstimate {
    /// Single-draw estimate with sampling variance `variance`.
    pub fn single(tau_hat: f64, variance: f64) -> Self {
        let half = Z_975 * variance.max(0.0).sqrt();
        AteEstimate {
            tau_hat,
            per_draw: vec![tau_hat],
            within_variance: variance,
            between_variance: 0.0,
            total_variance: variance,
            ci_95: (tau_hat - half, tau_hat + half),
        }
    }
}

/// Nuisance-model settings shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuisanceConfig {
    /// Ridge penalty for the propensity and outcome regressions.
    pub lambda: f64,
    /// Propensities are clipped into `[eta_clip, 1 − eta_clip]`.
    pub eta_clip: f64,
    /// Cross-fit nuisances over this many folds instead of fitting in-sample.
    pub cross_fit_folds: Option<usize>,
    /// Seed for the cross-fitting fold split.
    pub cross_fit_seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            lambda: 0.0,
            eta_clip: 0.01,
            cross_fit_folds: None,
            cross_fit_seed: 0,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_clip > 0.0 && self.eta_clip < 0.5) {
            return Err(Error::InvalidInput(format!(
                "propensity clip must lie in (0, 0.5), got {}",
                self.eta_clip
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if self.cross_fit_folds.is_some_and(|k| k < 2) {
            return Err(Error::InvalidInput("cross-fitting needs at least 2 folds".into()));
        }
        Ok(())
    }
}

fn check_inputs(features: &ArrayView2<f64>, w: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<()> {
    let n = features.nrows();
    for (context, len) in [("treatment length", w.len()), ("outcome length", y.len())] {
        if len != n {
            return Err(Error::Dimension {
                context,
                expected: n,
                found: len,
            });
        }
    }
    crate::data::check_binary(*w)?;
    let n1 = w.iter().filter(|&&v| v == 1.0).count();
    if n1 == 0 {
        return Err(Error::EmptyArm { arm: 1 });
    }
    if n1 == n {
        return Err(Error::EmptyArm { arm: 0 });
    }
    Ok(())
}

/// The doubly robust estimate from given nuisance predictions.
///
/// Per unit: `μ̂₁ − μ̂₀ + W(Y − μ̂₁)/ê − (1 − W)(Y − μ̂₀)/(1 − ê)` with `ê`
/// clipped to `[eta_clip, 1 − eta_clip]`; the estimate is the mean and its
/// variance the sample variance of the summands over `n`.
pub fn aipw_with_nuisances(
    w: ArrayView1<f64>,
    y: ArrayView1<f64>,
    propensity: ArrayView1<f64>,
    mu0: ArrayView1<f64>,
    mu1: ArrayView1<f64>,
    eta_clip: f64,
) -> Result<AteEstimate> {
    let n = w.len();
    if [y.len(), propensity.len(), mu0.len(), mu1.len()].iter().any(|&l| l != n) || n == 0 {
        return Err(Error::InvalidInput("nuisance vectors must share a positive length".into()));
    }
    let summands = influence_summands(w, y, propensity, mu0, mu1, eta_clip);
    let tau = summands.sum() / n as f64;
    let var = if n > 1 {
        summands.iter().map(|s| (s - tau).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64
    } else {
        0.0
    };
    if !tau.is_finite() {
        return Err(Error::NonFinite("doubly robust estimate".into()));
    }
    Ok(AteEstimate::single(tau, var))
}

pub(crate) fn influence_summands(
    w: ArrayView1<f64>,
    y: ArrayView1<f64>,
    propensity: ArrayView1<f64>,
    mu0: ArrayView1<f64>,
    mu1: ArrayView1<f64>,
    eta_clip: f64,
) -> Array1<f64> {
    Array1::from_shape_fn(w.len(), |i| {
        let e = propensity[i].clamp(eta_clip, 1.0 - eta_clip);
        mu1[i] - mu0[i] + w[i] * (y[i] - mu1[i]) / e - (1.0 - w[i]) * (y[i] - mu0[i]) / (1.0 - e)
    })
}

/// Fitted nuisance predictions for every row.
#[derive(Debug, Clone)]
pub struct NuisancePredictions {
    pub propensity: Array1<f64>,
    pub mu0: Array1<f64>,
    pub mu1: Array1<f64>,
}

fn arm_rows(w: &ArrayView1<f64>, rows: &[usize], arm: f64) -> Vec<usize> {
    rows.iter().copied().filter(|&i| w[i] == arm).collect()
}

fn fit_on(
    features: &ArrayView2<f64>,
    w: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
    train: &[usize],
    predict: &[usize],
    lambda: f64,
) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
    let treated = arm_rows(w, train, 1.0);
    let control = arm_rows(w, train, 0.0);
    if treated.is_empty() {
        return Err(Error::EmptyArm { arm: 1 });
    }
    if control.is_empty() {
        return Err(Error::EmptyArm { arm: 0 });
    }
    let xt = features.select(Axis(0), train);
    let wt = w.select(Axis(0), train);
    let ps = fit_logistic(xt.view(), wt.view(), lambda)?;
    let m1 = fit_linear(
        features.select(Axis(0), &treated).view(),
        y.select(Axis(0), &treated).view(),
        lambda,
    )?;
    let m0 = fit_linear(
        features.select(Axis(0), &control).view(),
        y.select(Axis(0), &control).view(),
        lambda,
    )?;
    let xp = features.select(Axis(0), predict);
    Ok((
        ps.predict_proba(xp.view()),
        m0.predict(xp.view()),
        m1.predict(xp.view()),
    ))
}

/// Logistic propensity on all rows; linear outcome surfaces per arm.
pub fn fit_nuisances(
    features: ArrayView2<f64>,
    w: ArrayView1<f64>,
    y: ArrayView1<f64>,
    cfg: &NuisanceConfig,
) -> Result<NuisancePredictions> {
    check_inputs(&features, &w, &y)?;
    cfg.validate()?;
    let n = features.nrows();
    match cfg.cross_fit_folds {
        None => {
            let all: Vec<usize> = (0..n).collect();
            let (propensity, mu0, mu1) = fit_on(&features, &w, &y, &all, &all, cfg.lambda)?;
            Ok(NuisancePredictions { propensity, mu0, mu1 })
        }
        Some(k) => {
            if k > n {
                return Err(Error::InvalidInput(format!("{k} cross-fitting folds over {n} rows")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::rng(cfg.cross_fit_seed));
            let mut out = NuisancePredictions {
                propensity: Array1::zeros(n),
                mu0: Array1::zeros(n),
                mu1: Array1::zeros(n),
            };
            for f in 0..k {
                let held: Vec<usize> = order.iter().copied().skip(f).step_by(k).collect();
                let train: Vec<usize> = order
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| pos % k != f)
                    .map(|(_, &i)| i)
                    .collect();
                let (e, m0, m1) = fit_on(&features, &w, &y, &train, &held, cfg.lambda)?;
                for (t, &i) in held.iter().enumerate() {
                    out.propensity[i] = e[t];
                    out.mu0[i] = m0[t];
                    out.mu1[i] = m1[t];
                }
            }
            Ok(out)
        }
    }
}

/// Augmented inverse-propensity-weighted (doubly robust) estimate with
/// logistic-linear nuisances fitted on `features`.
pub fn aipw(
    features: ArrayView2<f64>,
    w: ArrayView1<f64>,
    y: ArrayView1<f64>,
    cfg: &NuisanceConfig,
) -> Result<AteEstimate> {
    let fit = fit_nuisances(features, w, y, cfg)?;
    aipw_with_nuisances(
        w,
        y,
        fit.propensity.view(),
        fit.mu0.view(),
        fit.mu1.view(),
        cfg.eta_clip,
    )
}

/// Regression adjustment: OLS of `Y` on `[1, features, W]`; the estimate is
/// the coefficient of `W` with its classical OLS variance.
pub fn regression_adjust(
    features: ArrayView2<f64>,
    w: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<AteEstimate> {
    check_inputs(&features, &w, &y)?;
    let (n, q) = features.dim();
    let mut design = Array2::<f64>::zeros((n, q + 1));
    design.slice_mut(ndarray::s![.., ..q]).assign(&features);
    design.column_mut(q).assign(&w);
    let full = with_intercept(&design);
    let gram = full.t().dot(&full);
    let chol = Cholesky::factor(&gram).map_err(|e| match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!("collinear adjustment design: {msg}")),
        other => other,
    })?;
    let theta = chol.solve(&full.t().dot(&y));
    let tau = theta[q + 1];
    let resid = &y - &full.dot(&theta);
    let dof = n.saturating_sub(q + 2).max(1) as f64;
    let sigma2 = resid.dot(&resid) / dof;
    let var = sigma2 * chol.inverse_diagonal()[q + 1];
    Ok(AteEstimate::single(tau, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn hand_computed_summand() {
        let est = aipw_with_nuisances(
            array![1.0, 0.0].view(),
            array![2.0, 1.0].view(),
            array![0.5, 0.5].view(),
            array![0.0, 0.0].view(),
            array![0.0, 0.0].view(),
            0.01,
        )
        .unwrap();
        assert_eq!(est.tau_hat, 1.0);
        assert_eq!(est.per_draw, vec![1.0]);
        assert_eq!(est.between_variance, 0.0);
    }

    #[test]
    fn constant_outcome_gives_zero() {
        let mut rng = seed::rng(1);
        let x = Array2::from_shape_simple_fn((60, 2), || rng.sample::<f64, _>(StandardNormal));
        let w = Array1::from_shape_fn(60, |i| (i % 3 == 0) as u8 as f64);
        let y = Array1::from_elem(60, 3.25);
        let est = aipw(x.view(), w.view(), y.view(), &NuisanceConfig::default()).unwrap();
        assert!(est.tau_hat.abs() < 1e-10, "{}", est.tau_hat);
    }

    #[test]
    fn clipping_bounds_propensity() {
        let s = influence_summands(
            array![1.0, 0.0].view(),
            array![1.0, 1.0].view(),
            array![1e-9, 1.0 - 1e-9].view(),
            array![0.0, 0.0].view(),
            array![0.0, 0.0].view(),
            0.05,
        );
        assert!((s[0] - 1.0 / 0.05).abs() < 1e-12);
        assert!((s[1] + 1.0 / 0.05).abs() < 1e-12);
    }

    #[test]
    fn empty_arm_is_rejected() {
        let x = array![[1.0], [2.0]];
        let w = array![1.0, 1.0];
        let y = array![1.0, 2.0];
        assert!(matches!(
            aipw(x.view(), w.view(), y.view(), &NuisanceConfig::default()),
            Err(Error::EmptyArm { arm: 0 })
        ));
    }

    #[test]
    fn regression_recovers_exact_effect() {
        let mut rng = seed::rng(2);
        let x = Array2::from_shape_simple_fn((50, 2), || rng.sample::<f64, _>(StandardNormal));
        let w = Array1::from_shape_fn(50, |i| (i % 2) as f64);
        let y = w.mapv(|v| 2.0 + 3.0 * v);
        let est = regression_adjust(x.view(), w.view(), y.view()).unwrap();
        assert!((est.tau_hat - 3.0).abs() < 1e-8);
    }

    #[test]
    fn regression_rejects_collinear_treatment() {
        let x = array![[1.0], [2.0], [3.0]];
        let w = array![0.0, 1.0, 0.0];
        let y = array![1.0, 2.0, 3.0];
        // W duplicated as a feature.
        let dup = array![[0.0], [1.0], [0.0]];
        assert!(regression_adjust(x.view(), w.view(), y.view()).is_ok());
        assert!(matches!(
            regression_adjust(dup.view(), w.view(), y.view()),
            Err(Error::RankDeficient(_))
        ));
        let constant = array![1.0, 1.0, 1.0];
        assert!(regression_adjust(x.view(), constant.view(), y.view()).is_err());
    }

    #[test]
    fn cross_fitting_runs() {
        let mut rng = seed::rng(4);
        let x = Array2::from_shape_simple_fn((200, 2), || rng.sample::<f64, _>(StandardNormal));
        let w = x.column(0).mapv(|v| if v + rng.sample::<f64, _>(StandardNormal) > 0.0 { 1.0 } else { 0.0 });
        let y = x.column(0).to_owned() + &w;
        let cfg = NuisanceConfig {
            cross_fit_folds: Some(5),
            ..NuisanceConfig::default()
        };
        let est = aipw(x.view(), w.view(), y.view(), &cfg).unwrap();
        assert!((est.tau_hat - 1.0).abs() < 1e-8);
    }
}
