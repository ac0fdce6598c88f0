//! Ridge-regularized linear and logistic regressions with an unpenalized
//! intercept.
//!
//! Linear: minimize `‖y − b − Xβ‖² + λ‖β‖²`.
//! Logistic: maximize `Σ log-likelihood − (λ/2)‖β‖²` by damped Newton steps.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::datagen::sigmoid;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Intercept plus slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
}

impl LinearModel {
    pub fn predict(&self, features: ArrayView2<f64>) -> Array1<f64> {
        features.dot(&self.coefficients) + self.intercept
    }

    /// Predicted probabilities when the model is on the logit scale.
    pub fn predict_proba(&self, features: ArrayView2<f64>) -> Array1<f64> {
        self.predict(features).mapv(sigmoid)
    }
}

fn check_shapes(features: &ArrayView2<f64>, targets: &ArrayView1<f64>, lambda: f64) -> Result<()> {
    if features.nrows() != targets.len() {
        return Err(Error::Dimension {
            context: "regression rows",
            expected: features.nrows(),
            found: targets.len(),
        });
    }
    if features.nrows() == 0 {
        return Err(Error::InvalidInput("regression on zero rows".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge penalty must be ≥ 0, got {lambda}")));
    }
    if !features.iter().chain(targets.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("regression data".into()));
    }
    Ok(())
}

/// Weighted Gram system `[1 X]ᵀ diag(s) [1 X] + λ·diag(0, 1, …, 1)` and
/// right-hand side `[1 X]ᵀ r`.
fn normal_equations(
    features: &ArrayView2<f64>,
    weights: Option<&Array1<f64>>,
    rhs: &Array1<f64>,
    lambda: f64,
) -> (Array2<f64>, Array1<f64>) {
    let (n, q) = features.dim();
    let mut gram = Array2::<f64>::zeros((q + 1, q + 1));
    let mut b = Array1::<f64>::zeros(q + 1);
    let s = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total_w: f64 = (0..n).map(s).sum();
    gram[[0, 0]] = total_w;
    b[0] = rhs.sum();
    if q > 0 {
        let weighted = match weights {
            Some(w) => features.to_owned() * &w.view().insert_axis(Axis(1)),
            None => features.to_owned(),
        };
        let col_sums = weighted.sum_axis(Axis(0));
        let inner = weighted.t().dot(features);
        for a in 0..q {
            gram[[0, a + 1]] = col_sums[a];
            gram[[a + 1, 0]] = col_sums[a];
            for c in 0..q {
                gram[[a + 1, c + 1]] = inner[[a, c]];
            }
            gram[[a + 1, a + 1]] += lambda;
        }
        let xr = features.t().dot(rhs);
        b.slice_mut(ndarray::s![1..]).assign(&xr);
    }
    (gram, b)
}

fn split(theta: Array1<f64>) -> LinearModel {
    LinearModel {
        intercept: theta[0],
        coefficients: theta.slice(ndarray::s![1..]).to_owned(),
    }
}

/// Ridge regression via the normal equations.
pub fn fit_linear(features: ArrayView2<f64>, targets: ArrayView1<f64>, lambda: f64) -> Result<LinearModel> {
    check_shapes(&features, &targets, lambda)?;
    let (gram, rhs) = normal_equations(&features, None, &targets.to_owned(), lambda);
    let chol = Cholesky::factor(&gram).map_err(|e| match e {
        Error::RankDeficient(msg) if lambda == 0.0 => {
            Error::RankDeficient(format!("{msg}; use a positive ridge penalty"))
        }
        other => other,
    })?;
    Ok(split(chol.solve(&rhs)))
}

fn penalized_loglik(
    features: &ArrayView2<f64>,
    labels: &ArrayView1<f64>,
    theta: &Array1<f64>,
    lambda: f64,
) -> f64 {
    let eta = features.dot(&theta.slice(ndarray::s![1..])) + theta[0];
    let ll: f64 = eta
        .iter()
        .zip(labels.iter())
        .map(|(&t, &y)| {
            // y·t − log(1 + e^t), stable for large |t|
            let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            y * t - softplus
        })
        .sum();
    let penalty: f64 = theta.iter().skip(1).map(|b| b * b).sum();
    ll - 0.5 * lambda * penalty
}

const MAX_NEWTON: usize = 100;
/// Fitted logits beyond this magnitude with λ = 0 indicate
/// (quasi-)separation. Checked on the logits rather than the slopes so that
/// rescaling a feature does not change the verdict.
const SEPARATION_LOGIT: f64 = 1e3;
/// Every label fitted this closely with λ = 0 means the classes are separable.
const SEPARATION_RESIDUAL: f64 = 1e-6;

/// Penalized logistic regression by Newton–Raphson with step halving,
/// iterated until the gradient norm is below `1e-8`.
pub fn fit_logistic(features: ArrayView2<f64>, labels: ArrayView1<f64>, lambda: f64) -> Result<LinearModel> {
    check_shapes(&features, &labels, lambda)?;
    crate::data::check_binary(labels)?;
    let n1 = labels.iter().filter(|&&v| v == 1.0).count();
    if n1 == 0 || n1 == labels.len() {
        return Err(Error::SingleClass(if n1 == 0 { 0 } else { 1 }));
    }
    let q = features.ncols();
    let mean = n1 as f64 / labels.len() as f64;
    let mut theta = Array1::<f64>::zeros(q + 1);
    theta[0] = (mean / (1.0 - mean)).ln();
    let mut current = penalized_loglik(&features, &labels, &theta, lambda);
    for _ in 0..MAX_NEWTON {
        let prob = features.dot(&theta.slice(ndarray::s![1..])) + theta[0];
        let prob = prob.mapv(sigmoid);
        let resid = &labels - &prob;
        let weights = prob.mapv(|p| (p * (1.0 - p)).max(1e-12));
        let (mut hess, _) = normal_equations(&features, Some(&weights), &resid, lambda);
        let mut grad = Array1::<f64>::zeros(q + 1);
        grad[0] = resid.sum();
        if q > 0 {
            let xr = features.t().dot(&resid);
            for a in 0..q {
                grad[a + 1] = xr[a] - lambda * theta[a + 1];
            }
        }
        let gnorm = grad.dot(&grad).sqrt();
        if gnorm < 1e-8 {
            if lambda == 0.0 && q > 0 && resid.iter().all(|r| r.abs() < SEPARATION_RESIDUAL) {
                return Err(Error::Separation);
            }
            return Ok(split(theta));
        }
        // Tiny relative jitter keeps the Newton system solvable near
        // separation without favouring any feature scale.
        for i in 0..=q {
            hess[[i, i]] *= 1.0 + 1e-12;
        }
        let step = match Cholesky::factor(&hess) {
            Ok(ch) => ch.solve(&grad),
            Err(_) if lambda == 0.0 => return Err(Error::Separation),
            Err(e) => return Err(e),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &theta + &(&step * t);
            let value = penalized_loglik(&features, &labels, &cand, lambda);
            if value >= current - 1e-12 * current.abs() {
                theta = cand;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if lambda == 0.0 {
            let logits = features.dot(&theta.slice(ndarray::s![1..])) + theta[0];
            if logits.iter().any(|t| t.abs() > SEPARATION_LOGIT) {
                return Err(Error::Separation);
            }
        }
        if !accepted {
            // No ascent direction left at machine precision.
            return Ok(split(theta));
        }
    }
    if lambda == 0.0 {
        Err(Error::Separation)
    } else {
        Ok(split(theta))
    }
}
