//! Chained-equation multiple imputation and column-mean fill.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::estimators::{estimate, rubin_aggregate, AteEstimate, EstimatorMode, LinearModel, NuisanceConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeConfig {
    pub m: usize,
    pub sweeps: usize,
    /// Put `W` and `Y` in every imputation model's predictors.
    pub condition_on_outcome: bool,
    /// Ridge penalty per row; the imputation regressions use `ridge_scale·n`.
    pub ridge_scale: f64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            m: 20,
            sweeps: 10,
            condition_on_outcome: true,
            ridge_scale: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ColumnModel {
    pub column: usize,
    pub model: LinearModel,
    pub residual_sd: f64,
}

#[derive(Debug, Clone)]
pub struct ImputationSet {
    pub tables: Vec<Array2<f64>>,
    /// Final-sweep models of each chain, one entry per incomplete column.
    pub models: Vec<Vec<ColumnModel>>,
    pub seed: u64,
}

/// Fills each missing entry with its column's observed mean.
pub fn mean_impute(x: &IncompleteMatrix) -> Result<Array2<f64>> {
    let (mean, _) = x.observed_column_stats()?;
    let mut out = x.values().clone();
    ndarray::Zip::from(&mut out)
        .and(x.mask())
        .and_broadcast(&mean)
        .for_each(|v, &m, &mu| {
            if m {
                *v = mu;
            }
        });
    Ok(out)
}

struct ColumnFit {
    model: LinearModel,
    /// Coefficients laid out over all columns of the working matrix, with a
    /// zero at the target column.
    full: Array1<f64>,
    residual_sd: f64,
}

/// Ridge fit of column `j` of `a` on its other columns over the rows not in
/// `miss`, assembled from the full-data Gram `g` and column sums `s` minus
/// the contribution of the rows in `miss` (passed as `a_miss`).
fn column_fit(
    g: &Array2<f64>,
    s: &Array1<f64>,
    a_miss: &Array2<f64>,
    j: usize,
    n_obs: usize,
    lambda: f64,
) -> Result<ColumnFit> {
    let c = g.ncols();
    let g_obs = g - &a_miss.t().dot(a_miss);
    let s_obs = s - &a_miss.sum_axis(Axis(0));
    let preds: Vec<usize> = (0..c).filter(|&k| k != j).collect();
    let q = preds.len();
    let mut sys = Array2::<f64>::zeros((q + 1, q + 1));
    let mut rhs = Array1::<f64>::zeros(q + 1);
    sys[[0, 0]] = n_obs as f64;
    rhs[0] = s_obs[j];
    for (u, &ku) in preds.iter().enumerate() {
        sys[[0, u + 1]] = s_obs[ku];
        sys[[u + 1, 0]] = s_obs[ku];
        rhs[u + 1] = g_obs[[ku, j]];
        for (v, &kv) in preds.iter().enumerate() {
            sys[[u + 1, v + 1]] = g_obs[[ku, kv]];
        }
        sys[[u + 1, u + 1]] += lambda;
    }
    let theta = Cholesky::factor(&sys)?.solve(&rhs);
    let slopes = theta.slice(ndarray::s![1..]);
    // ‖y − Xθ‖² = yᵀy − 2θᵀXᵀy + θᵀXᵀXθ, with XᵀX the unpenalized system.
    let rss = g_obs[[j, j]] - 2.0 * theta.dot(&rhs) + theta.dot(&sys.dot(&theta)) - lambda * slopes.dot(&slopes);
    let dof = n_obs.saturating_sub(q + 1).max(1) as f64;
    let mut full = Array1::zeros(c);
    for (u, &ku) in preds.iter().enumerate() {
        full[ku] = theta[u + 1];
    }
    Ok(ColumnFit {
        model: LinearModel {
            intercept: theta[0],
            coefficients: slopes.to_owned(),
        },
        full,
        residual_sd: (rss.max(0.0) / dof).sqrt(),
    })
}

fn run_chain(
    x: &IncompleteMatrix,
    extra: &Array2<f64>,
    cfg: &ImputeConfig,
    chain_seed: u64,
) -> Result<(Array2<f64>, Vec<ColumnModel>)> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut rng = seed::rng(chain_seed);
    let mut a = ndarray::concatenate![Axis(1), mean_impute(x)?, extra.view()];
    let missing_rows: Vec<(usize, Vec<usize>)> = (0..p)
        .map(|j| (j, (0..n).filter(|&i| x.is_missing(i, j)).collect::<Vec<_>>()))
        .filter(|(_, rows)| !rows.is_empty())
        .collect();
    let lambda = cfg.ridge_scale * n as f64;
    let mut g = a.t().dot(&a);
    let mut s = a.sum_axis(Axis(0));
    let mut models = Vec::new();
    for sweep in 0..cfg.sweeps {
        let last = sweep + 1 == cfg.sweeps;
        for (j, miss) in &missing_rows {
            let j = *j;
            let a_miss = a.select(Axis(0), miss);
            let fit = column_fit(&g, &s, &a_miss, j, n - miss.len(), lambda)?;
            let pred = a_miss.dot(&fit.full) + fit.model.intercept;
            for (&i, &mu) in miss.iter().zip(pred.iter()) {
                a[[i, j]] = mu + fit.residual_sd * rng.sample::<f64, _>(StandardNormal);
            }
            let gj = a.t().dot(&a.column(j));
            g.row_mut(j).assign(&gj);
            g.column_mut(j).assign(&gj);
            s[j] = a.column(j).sum();
            if last {
                models.push(ColumnModel {
                    column: j,
                    model: fit.model,
                    residual_sd: fit.residual_sd,
                });
            }
        }
    }
    Ok((a.slice(ndarray::s![.., ..p]).to_owned(), models))
}

/// `cfg.m` independent chains of `cfg.sweeps` sweeps each. In every sweep
/// each incomplete column is regressed (ridge linear) on the other columns,
/// plus `W` and `Y` when conditioning on them, and its missing entries are
/// redrawn as prediction plus Gaussian residual noise.
pub fn iterative_impute(
    x: &IncompleteMatrix,
    w: &Array1<f64>,
    y: &Array1<f64>,
    cfg: &ImputeConfig,
    seed_value: u64,
) -> Result<ImputationSet> {
    if cfg.m == 0 {
        return Err(Error::InvalidInput("number of imputations must be ≥ 1".into()));
    }
    let n = x.nrows();
    if w.len() != n || y.len() != n {
        return Err(Error::Dimension {
            context: "treatment/outcome length",
            expected: n,
            found: if w.len() != n { w.len() } else { y.len() },
        });
    }
    if x.ncols() < 2 && !cfg.condition_on_outcome && x.has_missing() {
        return Err(Error::InvalidInput("chained equations need at least one predictor".into()));
    }
    let extra = if cfg.condition_on_outcome {
        ndarray::stack![Axis(1), w.view(), y.view()]
    } else {
        Array2::zeros((n, 0))
    };
    let chains = (0..cfg.m)
        .into_par_iter()
        .map(|c| run_chain(x, &extra, cfg, seed::mix(seed_value, c as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (tables, models) = chains.into_iter().unzip();
    Ok(ImputationSet {
        tables,
        models,
        seed: seed_value,
    })
}

/// Runs `mode` on every completed table and pools with Rubin's rules.
pub fn mi_estimate(
    imputations: &ImputationSet,
    w: &Array1<f64>,
    y: &Array1<f64>,
    mode: EstimatorMode,
    nuisance: &NuisanceConfig,
) -> Result<AteEstimate> {
    if imputations.tables.is_empty() {
        return Err(Error::InvalidInput("empty imputation set".into()));
    }
    let per_table = imputations
        .tables
        .iter()
        .enumerate()
        .map(|(j, t)| estimate(t, w, y, mode, nuisance).map_err(|e| Error::draw(j, e)))
        .collect::<Result<Vec<_>>>()?;
    if per_table.len() == 1 {
        return Ok(per_table.into_iter().next().expect("one table"));
    }
    let taus: Vec<f64> = per_table.iter().map(|e| e.tau_hat).collect();
    let within: Vec<f64> = per_table.iter().map(|e| e.total_variance).collect();
    rubin_aggregate(&taus, &within)
}
