use std::io::Write;

use rand::seq::SliceRandom;

use super::model::{LatentModel, ModelConfig, Standardizer};
use super::objective::bound_sum;
use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, OptimizerState};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Importance samples per row and step.
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop after this many epochs without a new best epoch bound.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 20,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: Some(20),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "K, epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean training bound per completed epoch.
    pub trace: Vec<f64>,
    pub stopped_early: bool,
}

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Fits a fresh model on `x` (raw scale). Standardization statistics come
/// from the observed entries of `x`.
pub fn train(
    x: &IncompleteMatrix,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(LatentModel, TrainReport)> {
    cfg.validate()?;
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(Error::InvalidInput("training data is empty".into()));
    }
    let standardizer = Standardizer::fit(x)?;
    let mut init_rng = seed::rng(seed::mix(cfg.seed, STREAM_INIT));
    let model = LatentModel::init(standardizer, model_cfg, &mut init_rng)?;
    train_model(model, x, cfg)
}

/// Continues optimizing an existing model.
pub fn train_model(
    mut model: LatentModel,
    x: &IncompleteMatrix,
    cfg: &TrainConfig,
) -> Result<(LatentModel, TrainReport)> {
    cfg.validate()?;
    let (xs, input) = model.encoder_inputs(x)?;
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_state = OptimizerState::new(&model.encoder, adam);
    let mut dec_state = OptimizerState::new(&model.decoder, adam);
    let mut shuffle_rng = seed::rng(seed::mix(cfg.seed, STREAM_SHUFFLE));
    let mut noise_rng = seed::rng(seed::mix(cfg.seed, STREAM_NOISE));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (sum, grads) = bound_sum(&model, &xs, &input, batch, cfg.k, &mut noise_rng, true)
                .map_err(|e| match e {
                    Error::NonFiniteBound { .. } | Error::NonFinite(_) => Error::Diverged { epoch },
                    other => other,
                })?;
            epoch_total += sum;
            let mut grads = grads.expect("gradients requested");
            // Descend on the negated mean bound.
            let scale = -1.0 / batch.len() as f64;
            grads.encoder.scale(scale);
            grads.decoder.scale(scale);
            adam_step(&mut model.encoder, &grads.encoder, &mut enc_state)?;
            adam_step(&mut model.decoder, &grads.decoder, &mut dec_state)?;
        }
        let mean_bound = epoch_total / x.nrows() as f64;
        if !mean_bound.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: bound {mean_bound:.5}");
        trace.push(mean_bound);
        if best == f64::NEG_INFINITY || mean_bound > best + 1e-4 * best.abs().max(1.0) {
            best = mean_bound;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            stopped_early = true;
            break;
        }
    }
    Ok((
        model,
        TrainReport {
            trace,
            stopped_early,
        },
    ))
}

/// Writes `epoch,bound` rows.
pub fn write_trace_csv<W: Write>(trace: &[f64], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Csv {
        line: 0,
        message: e.to_string(),
    };
    wtr.write_record(["epoch", "bound"]).map_err(err)?;
    for (epoch, b) in trace.iter().enumerate() {
        wtr.write_record([epoch.to_string(), format!("{b:?}")]).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::Csv {
        line: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{simulate, CovariateModel, SimulationConfig};

    fn data(seed_value: u64) -> IncompleteMatrix {
        let mut cfg = SimulationConfig::new(200, 6, 2, CovariateModel::Lrmf);
        cfg.missing_prob = 0.2;
        cfg.seed = seed_value;
        simulate(&cfg).unwrap().0.x
    }

    fn small() -> ModelConfig {
        ModelConfig {
            latent_dim: 2,
            hidden: vec![16],
            sigma2_prior: 1.0,
        }
    }

    #[test]
    fn bound_improves_and_patience_waits_for_a_plateau() {
        let x = data(1);
        let cfg = TrainConfig {
            epochs: 40,
            k: 5,
            batch_size: 32,
            learning_rate: 5e-3,
            patience: Some(20),
            seed: 3,
        };
        let (_, report) = train(&x, &small(), &cfg).unwrap();
        assert_eq!(report.trace.len(), 40, "stopped while still improving");
        assert!(!report.stopped_early);
        let head: f64 = report.trace[..3].iter().sum::<f64>() / 3.0;
        let tail: f64 = report.trace[37..].iter().sum::<f64>() / 3.0;
        assert!(tail > head + 1.0, "{head} → {tail}");
    }

    #[test]
    fn patience_stops_a_flat_run() {
        let x = data(2);
        let cfg = TrainConfig {
            epochs: 50,
            k: 2,
            learning_rate: 1e-12,
            patience: Some(3),
            ..TrainConfig::default()
        };
        let (_, report) = train(&x, &small(), &cfg).unwrap();
        assert!(report.stopped_early);
        assert!(report.trace.len() < 50);
    }

    #[test]
    fn training_is_deterministic() {
        let x = data(4);
        let cfg = TrainConfig {
            epochs: 3,
            k: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ra) = train(&x, &small(), &cfg).unwrap();
        let (b, rb) = train(&x, &small(), &cfg).unwrap();
        assert_eq!(ra.trace, rb.trace);
        assert_eq!(a.decoder.layers()[0].weight, b.decoder.layers()[0].weight);
        let (_, rc) = train(&x, &small(), &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(ra.trace, rc.trace);
    }

    #[test]
    fn invalid_settings_rejected() {
        let x = data(5);
        for cfg in [
            TrainConfig { k: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        ] {
            assert!(train(&x, &small(), &cfg).is_err());
        }
    }

    #[test]
    fn trace_csv_layout() {
        let mut buf = Vec::new();
        write_trace_csv(&[-3.5, -2.25], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,bound\n0,-3.5\n1,-2.25\n");
    }
}
