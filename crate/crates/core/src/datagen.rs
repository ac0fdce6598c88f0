//! Synthetic observational worlds with latent confounders.
//!
//! A latent `Z ~ N(0, I_d)` drives the covariates (through a low-rank linear
//! map or a tanh-parameterized Gaussian decoder), the treatment
//! (`logit e(Z) = αᵀZ`) and the outcome (`Y = βᵀZ + τW + ε`). Covariates are
//! then masked completely at random. The true average effect is exactly `τ`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{IncompleteMatrix, ObservationalDataset};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateModel {
    /// `X = Z Vᵀ + noise`.
    Lrmf,
    /// `X | Z ~ N(V tanh(UZ + a) + b, exp(ηᵀ tanh(UZ + a) + δ) I)`.
    Dlvm,
}

impl CovariateModel {
    pub fn name(self) -> &'static str {
        match self {
            CovariateModel::Lrmf => "lrmf",
            CovariateModel::Dlvm => "dlvm",
        }
    }
}

impl std::str::FromStr for CovariateModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lrmf" => Ok(CovariateModel::Lrmf),
            "dlvm" => Ok(CovariateModel::Dlvm),
            other => Err(Error::InvalidInput(format!("unknown covariate model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub covariate_model: CovariateModel,
    pub missing_prob: f64,
    pub snr: f64,
    pub tau: f64,
    pub seed: u64,
    /// Standard deviation of the additive LRMF noise.
    pub lrmf_noise_sd: f64,
    /// Hidden width of the DLVM decoder; `None` means `2d`.
    pub dlvm_hidden: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig::new(1000, 10, 2, CovariateModel::Lrmf)
    }
}

impl SimulationConfig {
    pub fn new(n: usize, p: usize, d: usize, covariate_model: CovariateModel) -> Self {
        SimulationConfig {
            n,
            p,
            d,
            covariate_model,
            missing_prob: 0.0,
            snr: 10.0,
            tau: 1.0,
            seed: 0,
            lrmf_noise_sd: 0.1,
            dlvm_hidden: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.d == 0 {
            return Err(Error::InvalidInput("n, p and d must be positive".into()));
        }
        if self.d > self.p {
            return Err(Error::InvalidInput(format!(
                "latent dimension d={} exceeds p={}",
                self.d, self.p
            )));
        }
        if !(0.0..=1.0).contains(&self.missing_prob) {
            return Err(Error::InvalidInput(format!(
                "missing probability {} outside [0, 1]",
                self.missing_prob
            )));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidInput(format!("snr must be positive, got {}", self.snr)));
        }
        if !self.tau.is_finite() || !(self.lrmf_noise_sd >= 0.0) {
            return Err(Error::InvalidInput("tau and noise scale must be finite".into()));
        }
        if self.dlvm_hidden == Some(0) {
            return Err(Error::InvalidInput("dlvm hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub z: Array2<f64>,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub propensities: Array1<f64>,
    /// `βᵀZ_i + τW_i`.
    pub signal: Array1<f64>,
    pub noise_sd: f64,
}

impl GroundTruth {
    pub fn propensity_range(&self) -> (f64, f64) {
        self.propensities
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| {
                (lo.min(e), hi.max(e))
            })
    }
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.sample(StandardNormal))
}

/// `n × d` matrix of i.i.d. standard normals.
pub fn gen_latent(n: usize, d: usize, seed: u64) -> Array2<f64> {
    normal_matrix(n, d, &mut seed::rng(seed))
}

/// `Z Vᵀ + E` with Gaussian loadings `V` (`p × d`) and noise `E ~ N(0, noise_sd²)`.
pub fn gen_lrmf(z: &Array2<f64>, p: usize, noise_sd: f64, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    let loadings = normal_matrix(p, z.ncols(), &mut rng);
    lrmf_with_loadings(z, &loadings, noise_sd, &mut rng)
}

pub fn lrmf_with_loadings<R: Rng + ?Sized>(
    z: &Array2<f64>,
    loadings: &Array2<f64>,
    noise_sd: f64,
    rng: &mut R,
) -> Array2<f64> {
    let mut x = z.dot(&loadings.t());
    if noise_sd > 0.0 {
        x.mapv_inplace(|v| v + noise_sd * rng.sample::<f64, _>(StandardNormal));
    }
    x
}

/// Parameters of the tanh decoder used by the DLVM world.
#[derive(Debug, Clone, PartialEq)]
pub struct DlvmParams {
    /// `h × d`
    pub u: Array2<f64>,
    /// `p × h`
    pub v: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub eta: Array1<f64>,
    pub delta: f64,
}

impl DlvmParams {
    /// `U, V, a, b, η` standard normal; `δ ~ Uniform(-1, 1)`.
    pub fn draw<R: Rng + ?Sized>(d: usize, p: usize, h: usize, rng: &mut R) -> Self {
        DlvmParams {
            u: normal_matrix(h, d, rng),
            v: normal_matrix(p, h, rng),
            a: normal_vector(h, rng),
            b: normal_vector(p, rng),
            eta: normal_vector(h, rng),
            delta: rng.sample(Uniform::new(-1.0, 1.0)),
        }
    }

    /// Per-row mean (`n × p`) and log-variance (`n`, shared across coordinates).
    pub fn moments(&self, z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let mut hidden = z.dot(&self.u.t());
        hidden += &self.a;
        hidden.mapv_inplace(f64::tanh);
        let mut mean = hidden.dot(&self.v.t());
        mean += &self.b;
        let log_var = hidden.dot(&self.eta) + self.delta;
        (mean, log_var)
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        let (mut x, log_var) = self.moments(z);
        for (mut row, lv) in x.axis_iter_mut(Axis(0)).zip(log_var.iter()) {
            let sd = (0.5 * lv).exp();
            row.mapv_inplace(|m| m + sd * rng.sample::<f64, _>(StandardNormal));
        }
        x
    }
}

/// DLVM covariates with freshly drawn decoder parameters of hidden width `h`.
pub fn gen_dlvm(z: &Array2<f64>, p: usize, h: usize, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    let params = DlvmParams::draw(z.ncols(), p, h, &mut rng);
    params.sample(z, &mut rng)
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic-linear assignment: returns `(W, e)` with `e_i = σ(αᵀZ_i)`.
pub fn gen_treatment(z: &Array2<f64>, alpha: &Array1<f64>, seed: u64) -> (Array1<f64>, Array1<f64>) {
    let mut rng = seed::rng(seed);
    let e = z.dot(alpha).mapv(sigmoid);
    let w = e.mapv(|p| {
        let coin = Bernoulli::new(p).expect("sigmoid lies in [0, 1]");
        if coin.sample(&mut rng) {
            1.0
        } else {
            0.0
        }
    });
    (w, e)
}

/// `Y = βᵀZ + τW + N(0, σ²)` with `σ² = Var(signal)/snr` (population variance
/// of the realized signal). Returns `(Y, σ)`.
pub fn gen_outcome(
    z: &Array2<f64>,
    w: &Array1<f64>,
    beta: &Array1<f64>,
    tau: f64,
    snr: f64,
    seed: u64,
) -> Result<(Array1<f64>, f64)> {
    if !(snr > 0.0) {
        return Err(Error::InvalidInput(format!("snr must be positive, got {snr}")));
    }
    let signal = z.dot(beta) + &(w * tau);
    let sd = (population_variance(signal.view()) / snr).sqrt();
    let mut rng = seed::rng(seed);
    let y = signal.mapv(|s| s + sd * rng.sample::<f64, _>(StandardNormal));
    Ok((y, sd))
}

pub(crate) fn population_variance(v: ndarray::ArrayView1<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Masks each entry independently with probability `rho`.
pub fn apply_mcar(x: &Array2<f64>, rho: f64, seed: u64) -> Result<IncompleteMatrix> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("missing probability {rho} outside [0, 1]")));
    }
    let mut rng = seed::rng(seed);
    let coin = Bernoulli::new(rho).expect("rho checked");
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || coin.sample(&mut rng));
    IncompleteMatrix::new(x.clone(), mask)
}

fn unit_normal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v = normal_vector(d, rng);
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

// Sub-stream identifiers for `simulate`.
const STREAM_LATENT: u64 = 1;
const STREAM_COVARIATES: u64 = 2;
const STREAM_COEFFICIENTS: u64 = 3;
const STREAM_TREATMENT: u64 = 4;
const STREAM_OUTCOME: u64 = 5;
const STREAM_MASK: u64 = 6;

/// Runs the whole generative pipeline for one configuration.
pub fn simulate(cfg: &SimulationConfig) -> Result<(ObservationalDataset, GroundTruth)> {
    cfg.validate()?;
    let s = |stream| seed::mix(cfg.seed, stream);
    let z = gen_latent(cfg.n, cfg.d, s(STREAM_LATENT));
    let x = match cfg.covariate_model {
        CovariateModel::Lrmf => gen_lrmf(&z, cfg.p, cfg.lrmf_noise_sd, s(STREAM_COVARIATES)),
        CovariateModel::Dlvm => gen_dlvm(
            &z,
            cfg.p,
            cfg.dlvm_hidden.unwrap_or(2 * cfg.d),
            s(STREAM_COVARIATES),
        ),
    };
    let mut coef_rng = seed::rng(s(STREAM_COEFFICIENTS));
    let alpha = unit_normal(cfg.d, &mut coef_rng);
    let beta = unit_normal(cfg.d, &mut coef_rng);
    let (w, e) = gen_treatment(&z, &alpha, s(STREAM_TREATMENT));
    let (y, noise_sd) = gen_outcome(&z, &w, &beta, cfg.tau, cfg.snr, s(STREAM_OUTCOME))?;
    let x_star = apply_mcar(&x, cfg.missing_prob, s(STREAM_MASK))?;

    let mu0 = z.dot(&beta);
    let mu1 = &mu0 + cfg.tau;
    let signal = &mu0 + &(&w * cfg.tau);
    let mut ds = ObservationalDataset::new(x_star, w, y)?;
    ds.z = Some(z.clone());
    ds.true_propensity = Some(e.clone());
    ds.mu0 = Some(mu0);
    ds.mu1 = Some(mu1);
    ds.x_complete = Some(x);
    let truth = GroundTruth {
        z,
        alpha,
        beta,
        propensities: e,
        signal,
        noise_sd,
    };
    Ok((ds, truth))
}
