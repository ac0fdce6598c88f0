use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::data::IncompleteMatrix;
use crate::error::{Error, Result};
use crate::nn::serialize::{parse_usize, parse_values, read_tagged, write_values};
use crate::nn::{Activation, DenseNetwork};

/// Per-column centering and scaling computed from observed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub sd: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &IncompleteMatrix) -> Result<Self> {
        let (mean, sd) = x.observed_column_stats()?;
        Ok(Standardizer { mean, sd })
    }

    pub fn identity(p: usize) -> Self {
        Standardizer {
            mean: Array1::zeros(p),
            sd: Array1::ones(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, x: &IncompleteMatrix) -> Result<IncompleteMatrix> {
        if x.ncols() != self.dim() {
            return Err(Error::Dimension {
                context: "standardizer width",
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let values = (x.values() - &self.mean) / &self.sd;
        IncompleteMatrix::new(values, x.mask().clone())
    }

    pub fn destandardize(&self, x: &IncompleteMatrix) -> Result<IncompleteMatrix> {
        let values = x.values() * &self.sd + &self.mean;
        IncompleteMatrix::new(values, x.mask().clone())
    }
}

/// Fills missing entries with the column mean (observed entries untouched).
///
/// In the standardized scale the means are zero, so this is zero-imputation.
pub fn zero_impute(
    values: ArrayView1<f64>,
    missing: ArrayView1<bool>,
    column_means: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if values.len() != missing.len() || values.len() != column_means.len() {
        return Err(Error::Dimension {
            context: "zero_impute row width",
            expected: values.len(),
            found: column_means.len(),
        });
    }
    let mut out = values.to_owned();
    for j in 0..out.len() {
        if missing[j] {
            let m = column_means[j];
            if !m.is_finite() {
                return Err(Error::EmptyColumn { column: j });
            }
            out[j] = m;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Hidden layer widths shared by encoder and decoder.
    pub hidden: Vec<usize>,
    pub sigma2_prior: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 2,
            hidden: vec![128],
            sigma2_prior: 1.0,
        }
    }
}

/// Encoder, decoder, prior variance and the column standardization the
/// networks were trained in.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    /// `p → … → 2d`: proposal mean and log-variance.
    pub encoder: DenseNetwork,
    /// `d → … → 2p`: observation mean and log-variance.
    pub decoder: DenseNetwork,
    pub latent_dim: usize,
    pub sigma2_prior: f64,
    pub standardizer: Standardizer,
}

impl LatentModel {
    pub fn new(
        encoder: DenseNetwork,
        decoder: DenseNetwork,
        sigma2_prior: f64,
        standardizer: Standardizer,
    ) -> Result<Self> {
        let p = standardizer.dim();
        if encoder.input_dim() != p || decoder.output_dim() != 2 * p {
            return Err(Error::Dimension {
                context: "latent model covariate width",
                expected: p,
                found: encoder.input_dim(),
            });
        }
        if encoder.output_dim() % 2 != 0 || decoder.input_dim() * 2 != encoder.output_dim() {
            return Err(Error::Dimension {
                context: "latent model code width",
                expected: decoder.input_dim(),
                found: encoder.output_dim() / 2,
            });
        }
        if !(sigma2_prior > 0.0 && sigma2_prior.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prior variance must be positive, got {sigma2_prior}"
            )));
        }
        Ok(LatentModel {
            latent_dim: decoder.input_dim(),
            encoder,
            decoder,
            sigma2_prior,
            standardizer,
        })
    }

    /// Randomly initialized model for covariates standardized by `standardizer`.
    pub fn init<R: Rng + ?Sized>(
        standardizer: Standardizer,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let p = standardizer.dim();
        let d = cfg.latent_dim;
        if d == 0 {
            return Err(Error::InvalidInput("latent dimension must be positive".into()));
        }
        let mut enc_sizes = vec![p];
        enc_sizes.extend(&cfg.hidden);
        enc_sizes.push(2 * d);
        let mut dec_sizes = vec![d];
        dec_sizes.extend(&cfg.hidden);
        dec_sizes.push(2 * p);
        let encoder = DenseNetwork::init(&enc_sizes, Activation::Tanh, Activation::Identity, rng)?;
        let decoder = DenseNetwork::init(&dec_sizes, Activation::Tanh, Activation::Identity, rng)?;
        LatentModel::new(encoder, decoder, cfg.sigma2_prior, standardizer)
    }

    pub fn covariate_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn log_sigma2_prior(&self) -> f64 {
        self.sigma2_prior.ln()
    }

    /// Standardized, zero-imputed encoder inputs plus the standardized data.
    pub(crate) fn encoder_inputs(
        &self,
        x: &IncompleteMatrix,
    ) -> Result<(IncompleteMatrix, Array2<f64>)> {
        let xs = self.standardizer.standardize(x)?;
        let mut input = xs.values().clone();
        input.zip_mut_with(xs.mask(), |v, &m| {
            if m {
                *v = 0.0;
            }
        });
        Ok((xs, input))
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "latent-model 1")?;
        writeln!(w, "covariates {}", self.covariate_dim())?;
        writeln!(w, "sigma2_prior {:?}", self.sigma2_prior)?;
        write_values(w, "column_mean", self.standardizer.mean.iter())?;
        write_values(w, "column_sd", self.standardizer.sd.iter())?;
        writeln!(w, "encoder")?;
        self.encoder.write_text(w)?;
        writeln!(w, "decoder")?;
        self.decoder.write_text(w)
    }

    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let header = read_tagged(r, "latent-model")?;
        if header.first().map(String::as_str) != Some("1") {
            return Err(Error::InvalidInput(format!(
                "latent model container: unsupported version {header:?}"
            )));
        }
        let p = parse_usize(read_tagged(r, "covariates")?.first())?;
        let prior = parse_values(&read_tagged(r, "sigma2_prior")?, 1)?[0];
        let mean = parse_values(&read_tagged(r, "column_mean")?, p)?;
        let sd = parse_values(&read_tagged(r, "column_sd")?, p)?;
        read_tagged(r, "encoder")?;
        let encoder = DenseNetwork::read_text(r)?;
        read_tagged(r, "decoder")?;
        let decoder = DenseNetwork::read_text(r)?;
        LatentModel::new(
            encoder,
            decoder,
            prior,
            Standardizer {
                mean: Array1::from(mean),
                sd: Array1::from(sd),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;

    #[test]
    fn zero_impute_cases() {
        let full = zero_impute(
            array![1.0, 2.0].view(),
            array![false, false].view(),
            array![9.0, 9.0].view(),
        )
        .unwrap();
        assert_eq!(full, array![1.0, 2.0]);
        let all = zero_impute(
            array![f64::NAN, f64::NAN].view(),
            array![true, true].view(),
            array![0.0, 0.0].view(),
        )
        .unwrap();
        assert_eq!(all, array![0.0, 0.0]);
        let mixed = zero_impute(
            array![f64::NAN, 3.0].view(),
            array![true, false].view(),
            array![1.5, 9.9].view(),
        )
        .unwrap();
        assert_eq!(mixed, array![1.5, 3.0]);
        let empty = zero_impute(
            array![f64::NAN].view(),
            array![true].view(),
            array![f64::NAN].view(),
        );
        assert!(matches!(empty, Err(Error::EmptyColumn { column: 0 })));
    }

    #[test]
    fn standardization_round_trip_is_exact_on_observed() {
        let x = IncompleteMatrix::new(
            array![[1.0, 10.0], [2.0, 0.0], [4.5, -3.0], [0.1, 7.0]],
            array![[false, false], [false, true], [true, false], [false, false]],
        )
        .unwrap();
        let s = Standardizer::fit(&x).unwrap();
        let back = s.destandardize(&s.standardize(&x).unwrap()).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                if let Some(v) = x.get(i, j) {
                    assert!((back.get(i, j).unwrap() - v).abs() <= 4.0 * f64::EPSILON * v.abs());
                }
            }
        }
    }

    #[test]
    fn model_text_round_trip() {
        let mut rng = seed::rng(1);
        let cfg = ModelConfig {
            latent_dim: 2,
            hidden: vec![5],
            sigma2_prior: 0.7,
        };
        let model = LatentModel::init(Standardizer::identity(4), &cfg, &mut rng).unwrap();
        let mut buf = Vec::new();
        model.write_text(&mut buf).unwrap();
        let back = LatentModel::read_text(&mut buf.as_slice()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn rejects_mismatched_networks() {
        let mut rng = seed::rng(1);
        let enc = DenseNetwork::init(&[3, 4], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let dec = DenseNetwork::init(&[3, 6], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        assert!(LatentModel::new(enc, dec, 1.0, Standardizer::identity(3)).is_err());
    }
}
