//! Nuclear-norm regularized matrix completion by iterated singular value
//! soft-thresholding.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use super::svd::svd;
use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftImputeConfig {
    pub max_iter: usize,
    /// Relative Frobenius change `‖A₊ − A‖²/‖A‖²` below which iteration stops.
    pub tol: f64,
    /// Complete the column-centered matrix (centers from observed entries).
    pub center: bool,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        SoftImputeConfig {
            max_iter: 500,
            tol: 1e-5,
            center: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    /// Observed entries as given, missing entries from the low-rank fit.
    pub completed: Array2<f64>,
    /// The low-rank fit `A` itself (on the centered scale when centering).
    pub low_rank: Array2<f64>,
    pub column_centers: Array1<f64>,
    /// `U·diag(s)` truncated at the effective rank: the latent estimate.
    pub latent: Array2<f64>,
    pub loadings: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub effective_rank: usize,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Thresholded {
    matrix: Array2<f64>,
    latent: Array2<f64>,
    loadings: Array2<f64>,
    values: Array1<f64>,
    nuclear: f64,
}

fn soft_threshold(a: &Array2<f64>, lambda: f64) -> Thresholded {
    let d = svd(a);
    let shrunk = d.s.mapv(|s| (s - lambda).max(0.0));
    let rank = shrunk.iter().take_while(|&&s| s > 0.0).count();
    let u = d.u.slice(ndarray::s![.., ..rank]).to_owned();
    let v = d.v.slice(ndarray::s![.., ..rank]).to_owned();
    let values = shrunk.slice(ndarray::s![..rank]).to_owned();
    let latent = &u * &values;
    Thresholded {
        matrix: latent.dot(&v.t()),
        latent,
        loadings: v,
        nuclear: values.sum(),
        values,
    }
}

fn objective(x: &Array2<f64>, mask: &Array2<bool>, a: &Array2<f64>, lambda: f64, nuclear: f64) -> f64 {
    let mut loss = 0.0;
    ndarray::Zip::from(x).and(mask).and(a).for_each(|&xv, &m, &av| {
        if !m {
            loss += (xv - av).powi(2);
        }
    });
    0.5 * loss + lambda * nuclear
}

fn centers(x: &IncompleteMatrix, center: bool) -> Result<Array1<f64>> {
    let (mean, _) = x.observed_column_stats()?;
    Ok(if center { mean } else { Array1::zeros(x.ncols()) })
}

/// Soft-impute from an optional warm start `init` (on the centered scale).
pub fn soft_impute_from(
    x: &IncompleteMatrix,
    lambda: f64,
    cfg: &SoftImputeConfig,
    init: Option<&Array2<f64>>,
) -> Result<CompletionResult> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let col_centers = centers(x, cfg.center)?;
    let mask = x.mask();
    let mut xc = x.values() - &col_centers;
    xc.zip_mut_with(mask, |v, &m| {
        if m {
            *v = 0.0;
        }
    });
    // Mean-filled start: missing entries at the (centered) column mean, i.e. 0.
    let mut current = match init {
        Some(a) => a.clone(),
        None => xc.clone(),
    };
    let mut filled = xc.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last = None;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        ndarray::Zip::from(&mut filled)
            .and(&xc)
            .and(mask)
            .and(&current)
            .for_each(|f, &xv, &m, &a| *f = if m { a } else { xv });
        let step = soft_threshold(&filled, lambda);
        let obj = objective(&xc, mask, &step.matrix, lambda, step.nuclear);
        let denom = current.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        let change = (&step.matrix - &current).iter().map(|v| v * v).sum::<f64>() / denom;
        trace.push(obj);
        current = step.matrix.clone();
        last = Some(step);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let step = last.expect("at least one iteration");
    let mut completed = x.values().clone();
    ndarray::Zip::from(&mut completed)
        .and(mask)
        .and(&step.matrix)
        .and_broadcast(&col_centers)
        .for_each(|c, &m, &a, &mu| {
            if m {
                *c = a + mu;
            }
        });
    Ok(CompletionResult {
        completed,
        low_rank: step.matrix,
        column_centers: col_centers,
        effective_rank: step.values.len(),
        latent: step.latent,
        loadings: step.loadings,
        singular_values: step.values,
        objective: *trace.last().expect("non-empty trace"),
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Iterates `A ← SVT_λ(P_obs(X) + P_miss(A))` from the mean-filled matrix.
pub fn soft_impute(x: &IncompleteMatrix, lambda: f64, cfg: &SoftImputeConfig) -> Result<CompletionResult> {
    soft_impute_from(x, lambda, cfg, None)
}

/// Largest singular value of the centered, mean-filled matrix: the smallest
/// penalty that thresholds the first iterate to zero.
pub fn lambda_max(x: &IncompleteMatrix, center: bool) -> Result<f64> {
    let col_centers = centers(x, center)?;
    let mut xc = x.values() - &col_centers;
    xc.zip_mut_with(x.mask(), |v, &m| {
        if m {
            *v = 0.0;
        }
    });
    Ok(svd(&xc).s.first().copied().unwrap_or(0.0))
}

/// `count` penalties spaced geometrically from `0.9·λ_max` down to `0.01·λ_max`.
pub fn lambda_grid(x: &IncompleteMatrix, count: usize, center: bool) -> Result<Vec<f64>> {
    let top = lambda_max(x, center)?;
    if count <= 1 {
        return Ok(vec![0.5 * top]);
    }
    let (hi, lo) = (0.9 * top, 0.01 * top);
    Ok((0..count)
        .map(|k| hi * (lo / hi).powf(k as f64 / (count - 1) as f64))
        .collect())
}

#[derive(Debug, Clone)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// `(λ, held-out mean squared error)` in grid order.
    pub errors: Vec<(f64, f64)>,
    /// Entries hidden during selection.
    pub holdout: Vec<(usize, usize)>,
}

/// Hides a further `holdout_frac` of the observed entries (keeping at least
/// one observed entry per column), completes with each `λ`, and returns the
/// one with the smallest held-out squared error. Ties go to the larger `λ`.
pub fn choose_lambda(
    x: &IncompleteMatrix,
    grid: &[f64],
    holdout_frac: f64,
    cfg: &SoftImputeConfig,
    seed: u64,
) -> Result<LambdaChoice> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    if !(0.0..1.0).contains(&holdout_frac) {
        return Err(Error::InvalidInput(format!("holdout fraction {holdout_frac} outside [0, 1)")));
    }
    if grid.len() == 1 {
        return Ok(LambdaChoice {
            lambda: grid[0],
            errors: vec![],
            holdout: vec![],
        });
    }
    let (n, p) = (x.nrows(), x.ncols());
    let mut observed: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|&(i, j)| !x.is_missing(i, j))
        .collect();
    observed.shuffle(&mut seed::rng(seed));
    let target = (holdout_frac * observed.len() as f64).round() as usize;
    let mut remaining: Vec<usize> = (0..p)
        .map(|j| (0..n).filter(|&i| !x.is_missing(i, j)).count())
        .collect();
    let mut holdout = Vec::with_capacity(target);
    for &(i, j) in &observed {
        if holdout.len() == target {
            break;
        }
        if remaining[j] > 1 {
            remaining[j] -= 1;
            holdout.push((i, j));
        }
    }
    let mut mask = x.mask().clone();
    for &(i, j) in &holdout {
        mask[[i, j]] = true;
    }
    let fit_data = IncompleteMatrix::new(x.values().clone(), mask)?;

    // Warm starts along decreasing λ.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut errors = vec![(0.0, 0.0); grid.len()];
    let mut warm: Option<Array2<f64>> = None;
    for &g in &order {
        let res = soft_impute_from(&fit_data, grid[g], cfg, warm.as_ref())?;
        let err = if holdout.is_empty() {
            0.0
        } else {
            holdout
                .iter()
                .map(|&(i, j)| (res.completed[[i, j]] - x.values()[[i, j]]).powi(2))
                .sum::<f64>()
                / holdout.len() as f64
        };
        errors[g] = (grid[g], err);
        warm = Some(res.low_rank);
    }
    let best = errors
        .iter()
        .copied()
        .fold(None::<(f64, f64)>, |acc, cand| match acc {
            Some(a) if a.1 < cand.1 || (a.1 == cand.1 && a.0 >= cand.0) => Some(a),
            _ => Some(cand),
        })
        .expect("non-empty grid");
    Ok(LambdaChoice {
        lambda: best.0,
        errors,
        holdout,
    })
}

/// Column means of `latent` are zero by construction when centering; this
/// helper exposes the fitted values at observed positions for diagnostics.
pub fn fitted_observed(result: &CompletionResult) -> Array2<f64> {
    &result.low_rank + &result.column_centers.view().insert_axis(Axis(0))
}
