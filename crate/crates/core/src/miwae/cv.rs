use rand::seq::SliceRandom;

use super::model::ModelConfig;
use super::objective::miwae_objective;
use super::train::{train, TrainConfig};
use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub sigma2_prior: f64,
    pub latent_dim: usize,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub best: GridPoint,
    /// Mean held-out bound per grid point, in grid order.
    pub scores: Vec<(GridPoint, f64)>,
}

/// Shuffled partition of `0..n` into `folds` non-empty validation sets.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidInput("cross-validation needs at least 2 folds".into()));
    }
    if folds > n {
        return Err(Error::InvalidInput(format!(
            "{folds} folds over {n} rows leaves a fold empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, row) in order.into_iter().enumerate() {
        out[pos % folds].push(row);
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

/// Picks `(σ²_prior, d)` maximizing the mean held-out importance-weighted
/// bound (estimated with `eval_k` samples). Ties go to the smaller latent
/// dimension, then the smaller prior variance.
pub fn cross_validate(
    x: &IncompleteMatrix,
    grid: &[GridPoint],
    folds: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    eval_k: usize,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let parts = fold_assignment(x.nrows(), folds, seed::mix(train_cfg.seed, 100))?;
    let mut scores = Vec::with_capacity(grid.len());
    for point in grid {
        let cfg = ModelConfig {
            latent_dim: point.latent_dim,
            sigma2_prior: point.sigma2_prior,
            ..model_cfg.clone()
        };
        let mut total = 0.0;
        for (f, validation) in parts.iter().enumerate() {
            let training: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();
            let mut tcfg = train_cfg.clone();
            tcfg.seed = seed::mix(train_cfg.seed, 200 + f as u64);
            let (model, _) = train(&x.select_rows(&training), &cfg, &tcfg)?;
            total += miwae_objective(
                &model,
                &x.select_rows(validation),
                eval_k,
                seed::mix(train_cfg.seed, 300 + f as u64),
            )?;
        }
        scores.push((*point, total / folds as f64));
    }
    let mut ranked: Vec<&(GridPoint, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        a.0.latent_dim
            .cmp(&b.0.latent_dim)
            .then(a.0.sigma2_prior.total_cmp(&b.0.sigma2_prior))
    });
    let best = ranked
        .iter()
        .fold(None::<&(GridPoint, f64)>, |acc, cand| match acc {
            Some(a) if a.1 >= cand.1 => Some(a),
            _ => Some(cand),
        })
        .expect("grid is non-empty")
        .0;
    Ok(CvResult { best, scores })
}
