use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::model::LatentModel;
use super::objective::{encoder_heads, log_sum_exp};
use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::nn::{log_normal, LOG_2PI, LOG_VARIANCE_MAX, LOG_VARIANCE_MIN};
use crate::seed;

/// `L` proposal draws for one row with their self-normalized weights.
#[derive(Debug, Clone)]
pub struct WeightedDraws {
    /// `L × d`
    pub draws: Array2<f64>,
    /// `log r_l = log p(x_obs|z_l) + log p(z_l) − log q(z_l|x)`.
    pub log_ratios: Array1<f64>,
    /// `w_l = r_l / Σ r`, computed in log space.
    pub weights: Array1<f64>,
}

impl WeightedDraws {
    pub fn weighted_mean(&self) -> Array1<f64> {
        self.weights.dot(&self.draws)
    }

    /// Per-coordinate weighted variance around the weighted mean.
    pub fn weighted_variance(&self) -> Array1<f64> {
        let mean = self.weighted_mean();
        let centered = &self.draws - &mean;
        self.weights.dot(&(&centered * &centered))
    }

    /// Kish effective sample size `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// `B` posterior tables, each `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub tables: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    /// `n × d` self-normalized estimate of `E[Z | X*]`.
    pub mean: Array2<f64>,
    /// `n × d` self-normalized estimate of `Var[Z | X*]` (diagonal).
    pub variance: Array2<f64>,
    pub effective_sample_size: Array1<f64>,
    pub draws: Option<PosteriorDraws>,
}

struct RowContext<'a> {
    model: &'a LatentModel,
    values: ArrayView1<'a, f64>,
    missing: ArrayView1<'a, bool>,
    q_mean: ArrayView1<'a, f64>,
    q_logvar: ArrayView1<'a, f64>,
}

fn weighted_draws<R: Rng + ?Sized>(
    ctx: &RowContext<'_>,
    row: usize,
    l: usize,
    rng: &mut R,
) -> Result<WeightedDraws> {
    let model = ctx.model;
    let d = model.latent_dim;
    let p = model.covariate_dim();
    let mut eps = Array2::<f64>::zeros((l, d));
    eps.mapv_inplace(|_| rng.sample(StandardNormal));
    let sd = ctx.q_logvar.mapv(|v| (0.5 * v).exp());
    let draws = &eps * &sd + &ctx.q_mean;

    // Decoder hidden stack, then only the output units of observed coordinates.
    let layers = model.decoder.layers();
    let (last, hidden_layers) = layers.split_last().expect("decoder has layers");
    let mut h = draws.clone();
    for layer in hidden_layers {
        h = layer.apply(&h.view());
    }
    let observed: Vec<usize> = (0..p).filter(|&j| !ctx.missing[j]).collect();
    let mut units = observed.clone();
    units.extend(observed.iter().map(|&j| p + j));
    let sub = crate::nn::Dense {
        weight: last.weight.select(Axis(0), &units),
        bias: last.bias.select(Axis(0), &units),
        activation: last.activation,
    };
    let out = sub.apply(&h.view());
    let o = observed.len();

    let log_prior_var = model.log_sigma2_prior();
    let q_norm: f64 = ctx.q_logvar.iter().map(|lv| LOG_2PI + lv).sum::<f64>();
    let mut log_ratios = Array1::<f64>::zeros(l);
    for s in 0..l {
        let mut lr = 0.0;
        for (t, &j) in observed.iter().enumerate() {
            let lv = out[[s, o + t]].clamp(LOG_VARIANCE_MIN, LOG_VARIANCE_MAX);
            lr += log_normal(ctx.values[j], out[[s, t]], lv);
        }
        let mut e2 = 0.0;
        for c in 0..d {
            lr += log_normal(draws[[s, c]], 0.0, log_prior_var);
            e2 += eps[[s, c]] * eps[[s, c]];
        }
        log_ratios[s] = lr + 0.5 * (q_norm + e2);
    }
    let lse = log_sum_exp(log_ratios.iter().copied());
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights { row });
    }
    let weights = log_ratios.mapv(|v| (v - lse).exp());
    Ok(WeightedDraws {
        draws,
        log_ratios,
        weights,
    })
}

fn check_counts(l: usize, b: usize) -> Result<()> {
    if l == 0 {
        return Err(Error::InvalidInput("L must be at least 1".into()));
    }
    if b > l {
        return Err(Error::InvalidInput(format!(
            "cannot resample B={b} from L={l} draws"
        )));
    }
    Ok(())
}

/// Self-normalized importance sampling for one row of `x` (raw scale).
///
/// The row's generator is stream `row` of key `seed`, so results match the
/// corresponding row of [`posterior`].
pub fn importance_weights(
    model: &LatentModel,
    x: &IncompleteMatrix,
    row: usize,
    l: usize,
    seed: u64,
) -> Result<WeightedDraws> {
    check_counts(l, 0)?;
    if row >= x.nrows() {
        return Err(Error::InvalidInput(format!("row {row} out of range")));
    }
    let one = x.select_rows(&[row]);
    let (xs, input) = model.encoder_inputs(&one)?;
    let (q_mean, q_logvar) = encoder_heads(model, &input)?;
    let ctx = RowContext {
        model,
        values: xs.values().row(0),
        missing: xs.mask().row(0),
        q_mean: q_mean.row(0),
        q_logvar: q_logvar.row(0),
    };
    weighted_draws(&ctx, row, l, &mut seed::row_rng(seed, row))
}

/// Posterior means for every row with `L` importance samples each, and,
/// when `b > 0`, `b` resampled codes per row drawn with replacement with
/// probabilities equal to the weights.
pub fn posterior(
    model: &LatentModel,
    x: &IncompleteMatrix,
    l: usize,
    b: usize,
    seed: u64,
) -> Result<PosteriorSummary> {
    check_counts(l, b)?;
    let (xs, input) = model.encoder_inputs(x)?;
    let (q_mean, q_logvar) = encoder_heads(model, &input)?;
    let n = x.nrows();
    let d = model.latent_dim;
    let per_row: Vec<(Array1<f64>, Array1<f64>, f64, Array2<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ctx = RowContext {
                model,
                values: xs.values().row(i),
                missing: xs.mask().row(i),
                q_mean: q_mean.row(i),
                q_logvar: q_logvar.row(i),
            };
            let mut rng = seed::row_rng(seed, i);
            let wd = weighted_draws(&ctx, i, l, &mut rng)?;
            let picked = if b > 0 {
                let index = WeightedIndex::new(wd.weights.iter())
                    .map_err(|_| Error::DegenerateWeights { row: i })?;
                let idx: Vec<usize> = (0..b).map(|_| index.sample(&mut rng)).collect();
                wd.draws.select(Axis(0), &idx)
            } else {
                Array2::zeros((0, d))
            };
            Ok((
                wd.weighted_mean(),
                wd.weighted_variance(),
                wd.effective_sample_size(),
                picked,
            ))
        })
        .collect::<Result<_>>()?;

    let mut mean = Array2::zeros((n, d));
    let mut variance = Array2::zeros((n, d));
    let mut ess = Array1::zeros(n);
    let mut tables = vec![Array2::zeros((n, d)); b];
    for (i, (m, v, e, picked)) in per_row.into_iter().enumerate() {
        mean.row_mut(i).assign(&m);
        variance.row_mut(i).assign(&v);
        ess[i] = e;
        for (j, table) in tables.iter_mut().enumerate() {
            table.row_mut(i).assign(&picked.row(j));
        }
    }
    Ok(PosteriorSummary {
        mean,
        variance,
        effective_sample_size: ess,
        draws: (b > 0).then_some(PosteriorDraws { tables }),
    })
}

/// `Ẑ(x*) = E[Z | X* = x*]` for every row.
pub fn posterior_mean(model: &LatentModel, x: &IncompleteMatrix, l: usize, seed: u64) -> Result<Array2<f64>> {
    Ok(posterior(model, x, l, 0, seed)?.mean)
}

/// `b` posterior tables resampled from `l` weighted proposal draws per row.
pub fn posterior_resample(
    model: &LatentModel,
    x: &IncompleteMatrix,
    l: usize,
    b: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    if b == 0 {
        return Err(Error::InvalidInput("B must be at least 1".into()));
    }
    Ok(posterior(model, x, l, b, seed)?
        .draws
        .expect("b > 0 yields draws"))
}
