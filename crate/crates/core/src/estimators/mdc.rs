//! The two latent-confounder strategies.
//!
//! *Process*: estimate `Ẑ = E[Z | X*]` once and run a complete-data
//! estimator on it. *Multiple imputation*: draw `B` tables `Z⁽ʲ⁾` from the
//! posterior, run the doubly robust estimator on each with its own nuisance
//! fits, and pool with Rubin's rules.

use ndarray::{Array1, Array2};

use super::aipw::{aipw, regression_adjust, AteEstimate, NuisanceConfig};
use super::rubin::aggregate_draws;
use super::EstimatorMode;
use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::miwae::{posterior_mean, posterior_resample, LatentModel, PosteriorDraws};

/// Runs `mode` on complete features.
pub fn estimate(
    features: &Array2<f64>,
    w: &Array1<f64>,
    y: &Array1<f64>,
    mode: EstimatorMode,
    nuisance: &NuisanceConfig,
) -> Result<AteEstimate> {
    match mode {
        EstimatorMode::Regression => regression_adjust(features.view(), w.view(), y.view()),
        EstimatorMode::Dr => aipw(features.view(), w.view(), y.view(), nuisance),
    }
}

/// Posterior-mean pre-processing followed by `mode`.
#[allow(clippy::too_many_arguments)]
pub fn mdc_process(
    model: &LatentModel,
    x: &IncompleteMatrix,
    w: &Array1<f64>,
    y: &Array1<f64>,
    mode: EstimatorMode,
    l: usize,
    nuisance: &NuisanceConfig,
    seed: u64,
) -> Result<AteEstimate> {
    let z_hat = posterior_mean(model, x, l, seed)?;
    estimate(&z_hat, w, y, mode, nuisance)
}

/// Doubly robust estimation on each posterior table, pooled by Rubin's rules.
pub fn mdc_mi_on(
    draws: &PosteriorDraws,
    w: &Array1<f64>,
    y: &Array1<f64>,
    nuisance: &NuisanceConfig,
) -> Result<AteEstimate> {
    if draws.tables.is_empty() {
        return Err(Error::InvalidInput("no posterior tables".into()));
    }
    let per_draw = draws
        .tables
        .iter()
        .enumerate()
        .map(|(j, table)| {
            aipw(table.view(), w.view(), y.view(), nuisance).map_err(|e| Error::draw(j, e))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_draws(&per_draw)
}

/// Multiple imputation of the latent confounders: `b` tables resampled from
/// `l` importance draws per row.
#[allow(clippy::too_many_arguments)]
pub fn mdc_mi(
    model: &LatentModel,
    x: &IncompleteMatrix,
    w: &Array1<f64>,
    y: &Array1<f64>,
    b: usize,
    l: usize,
    nuisance: &NuisanceConfig,
    seed: u64,
) -> Result<AteEstimate> {
    let draws = posterior_resample(model, x, l, b, seed)?;
    mdc_mi_on(&draws, w, y, nuisance)
}
