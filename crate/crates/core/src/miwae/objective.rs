use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::model::LatentModel;
use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::nn::{log_normal, Gradients, LOG_2PI, LOG_VARIANCE_MAX, LOG_VARIANCE_MIN};
use crate::seed;

/// Gradients of the summed per-row bound.
#[derive(Debug, Clone)]
pub struct BoundGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

#[inline]
fn clamp_log_var(v: f64) -> (f64, bool) {
    if v < LOG_VARIANCE_MIN {
        (LOG_VARIANCE_MIN, false)
    } else if v > LOG_VARIANCE_MAX {
        (LOG_VARIANCE_MAX, false)
    } else {
        (v, true)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-row importance-weighted bounds for `rows` of the standardized data
/// `xs` (encoder inputs `input`), summed. Noise is drawn from `rng` in
/// (row, sample, coordinate) order. With `want_grad` the gradients of the
/// summed bound are returned as well.
pub(crate) fn bound_sum<R: Rng + ?Sized>(
    model: &LatentModel,
    xs: &IncompleteMatrix,
    input: &Array2<f64>,
    rows: &[usize],
    k: usize,
    rng: &mut R,
    want_grad: bool,
) -> Result<(f64, Option<BoundGradients>)> {
    let d = model.latent_dim;
    let p = model.covariate_dim();
    let b = rows.len();
    let enc_in = input.select(Axis(0), rows);

    let enc_trace = if want_grad {
        Some(model.encoder.forward_trace(enc_in.view())?)
    } else {
        None
    };
    let enc_out = match &enc_trace {
        Some(t) => t.output().clone(),
        None => model.encoder.forward(enc_in.view())?,
    };

    let mut eps = Array2::<f64>::zeros((b * k, d));
    eps.mapv_inplace(|_| rng.sample(StandardNormal));
    let mut q_logvar = Array2::<f64>::zeros((b, d));
    let mut q_active = Array2::<bool>::from_elem((b, d), true);
    let mut z = Array2::<f64>::zeros((b * k, d));
    for i in 0..b {
        for c in 0..d {
            let (lv, active) = clamp_log_var(enc_out[[i, d + c]]);
            q_logvar[[i, c]] = lv;
            q_active[[i, c]] = active;
            let sd = (0.5 * lv).exp();
            for s in 0..k {
                let r = i * k + s;
                z[[r, c]] = enc_out[[i, c]] + sd * eps[[r, c]];
            }
        }
    }

    let dec_trace = if want_grad {
        Some(model.decoder.forward_trace(z.view())?)
    } else {
        None
    };
    let dec_out = match &dec_trace {
        Some(t) => t.output().clone(),
        None => model.decoder.forward(z.view())?,
    };

    let log_prior_var = model.log_sigma2_prior();
    let mut log_r = Array2::<f64>::zeros((b, k));
    for (i, &row) in rows.iter().enumerate() {
        let x = xs.values().row(row);
        let m = xs.mask().row(row);
        for s in 0..k {
            let r = i * k + s;
            let out = dec_out.row(r);
            let mut lp = 0.0;
            for j in 0..p {
                if !m[j] {
                    lp += log_normal(x[j], out[j], clamp_log_var(out[p + j]).0);
                }
            }
            for c in 0..d {
                lp += log_normal(z[[r, c]], 0.0, log_prior_var);
                lp += 0.5 * (LOG_2PI + q_logvar[[i, c]] + eps[[r, c]] * eps[[r, c]]);
            }
            log_r[[i, s]] = lp;
        }
    }

    let log_k = (k as f64).ln();
    let mut total = 0.0;
    let mut weights = Array2::<f64>::zeros((b, k));
    for (i, &row) in rows.iter().enumerate() {
        let lr = log_r.row(i);
        let bound = log_sum_exp(lr.iter().copied()) - log_k;
        if !bound.is_finite() {
            return Err(Error::NonFiniteBound { row });
        }
        total += bound;
        let lse = bound + log_k;
        for s in 0..k {
            weights[[i, s]] = (lr[s] - lse).exp();
        }
    }
    if !want_grad {
        return Ok((total, None));
    }
    let enc_trace = enc_trace.expect("traced when gradients are requested");
    let dec_trace = dec_trace.expect("traced when gradients are requested");

    let mut dec_grad_out = Array2::<f64>::zeros((b * k, 2 * p));
    for (i, &row) in rows.iter().enumerate() {
        let x = xs.values().row(row);
        let m = xs.mask().row(row);
        for s in 0..k {
            let r = i * k + s;
            let w = weights[[i, s]];
            let out = dec_out.row(r);
            let mut g = dec_grad_out.row_mut(r);
            for j in 0..p {
                if m[j] {
                    continue;
                }
                let (lv, active) = clamp_log_var(out[p + j]);
                let inv_var = (-lv).exp();
                let resid = x[j] - out[j];
                g[j] = w * resid * inv_var;
                if active {
                    g[p + j] = w * 0.5 * (resid * resid * inv_var - 1.0);
                }
            }
        }
    }
    let (dec_grads, mut dz) = model.decoder.backward(&dec_trace, dec_grad_out.view())?;
    let inv_prior = 1.0 / model.sigma2_prior;
    for i in 0..b {
        for s in 0..k {
            let r = i * k + s;
            let w = weights[[i, s]];
            for c in 0..d {
                dz[[r, c]] -= w * z[[r, c]] * inv_prior;
            }
        }
    }
    let mut enc_grad_out = Array2::<f64>::zeros((b, 2 * d));
    for i in 0..b {
        for c in 0..d {
            let sd = (0.5 * q_logvar[[i, c]]).exp();
            let mut g_mean = 0.0;
            let mut g_logvar = 0.0;
            for s in 0..k {
                let r = i * k + s;
                g_mean += dz[[r, c]];
                g_logvar += dz[[r, c]] * eps[[r, c]] * 0.5 * sd;
            }
            enc_grad_out[[i, c]] = g_mean;
            if q_active[[i, c]] {
                // −log q contributes +½ per coordinate; the weights sum to one.
                enc_grad_out[[i, d + c]] = g_logvar + 0.5;
            }
        }
    }
    let (enc_grads, _) = model.encoder.backward(&enc_trace, enc_grad_out.view())?;
    Ok((
        total,
        Some(BoundGradients {
            encoder: enc_grads,
            decoder: dec_grads,
        }),
    ))
}

/// Mean over rows of the importance-weighted bound with `k` samples:
/// `log (1/K) Σ_k p(x_obs | z_k) p(z_k) / q(z_k | ι(x_obs))`, where the
/// likelihood runs over observed coordinates only. Data is given on the raw
/// scale and standardized with the model's statistics.
pub fn miwae_objective(model: &LatentModel, x: &IncompleteMatrix, k: usize, seed: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (xs, input) = model.encoder_inputs(x)?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut rng = seed::rng(seed);
    let mut total = 0.0;
    // Chunk rows so that the decoder batch stays a few thousand rows.
    let chunk = (4096 / k).max(1);
    for part in rows.chunks(chunk) {
        total += bound_sum(model, &xs, &input, part, k, &mut rng, false)?.0;
    }
    Ok(total / x.nrows() as f64)
}

/// [`miwae_objective`] together with its gradient with respect to every
/// encoder and decoder parameter. Uses the same noise as
/// [`miwae_objective`] for equal `seed`, so the two agree on the value.
pub fn miwae_objective_gradient(
    model: &LatentModel,
    x: &IncompleteMatrix,
    k: usize,
    seed: u64,
) -> Result<(f64, BoundGradients)> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (xs, input) = model.encoder_inputs(x)?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let (total, grads) = bound_sum(model, &xs, &input, &rows, k, &mut seed::rng(seed), true)?;
    let mut grads = grads.expect("gradients requested");
    let scale = 1.0 / x.nrows() as f64;
    grads.encoder.scale(scale);
    grads.decoder.scale(scale);
    Ok((total * scale, grads))
}

/// [`miwae_objective`] with an explicit mask (`true` = missing).
pub fn miwae_objective_with_mask(
    model: &LatentModel,
    values: &Array2<f64>,
    mask: &Array2<bool>,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let x = IncompleteMatrix::new(values.clone(), mask.clone())?;
    miwae_objective(model, &x, k, seed)
}

/// Proposal means and clamped log-variances for every row of `input`.
pub(crate) fn encoder_heads(model: &LatentModel, input: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let out = model.encoder.forward(input.view())?;
    let d = model.latent_dim;
    let mean = out.slice(s![.., ..d]).to_owned();
    let logvar = out.slice(s![.., d..]).mapv(|v| clamp_log_var(v).0);
    Ok((mean, logvar))
}
