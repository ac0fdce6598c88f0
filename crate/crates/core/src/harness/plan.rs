//! Experiment plans and per-method settings, read from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{ImputeConfig, SoftImputeConfig};
use crate::datagen::{CovariateModel, SimulationConfig};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorMode, NuisanceConfig};
use crate::miwae::{GridPoint, ModelConfig, TrainConfig};
use crate::seed;

/// Ridge penalty per row used when nuisances are regularized.
pub const REGULARIZED_LAMBDA_PER_ROW: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "Z-oracle")]
    ZOracle,
    #[serde(rename = "X-complete")]
    XComplete,
    #[serde(rename = "MDC.process")]
    MdcProcess,
    #[serde(rename = "MDC.mi")]
    MdcMi,
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "MF")]
    Mf,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ZOracle,
        Method::XComplete,
        Method::MdcProcess,
        Method::MdcMi,
        Method::Mi,
        Method::Mf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ZOracle => "Z-oracle",
            Method::XComplete => "X-complete",
            Method::MdcProcess => "MDC.process",
            Method::MdcMi => "MDC.mi",
            Method::Mi => "MI",
            Method::Mf => "MF",
        }
    }

    /// `MDC.mi` pools doubly robust fits only.
    pub fn supports(self, mode: EstimatorMode) -> bool {
        self != Method::MdcMi || mode == EstimatorMode::Dr
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidInput(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiwaeSettings {
    /// Latent dimension of the fitted model; the scenario's `d` when absent.
    pub latent_dim: Option<usize>,
    pub hidden: Vec<usize>,
    pub sigma2_prior: f64,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Folds for choosing latent dimension and prior variance by held-out
    /// bound; 0 skips cross-validation.
    pub cv_folds: usize,
    /// Latent dimensions tried; `[latent dimension]` when empty.
    pub cv_latent_dims: Vec<usize>,
    /// Prior variances tried; `[sigma2_prior]` when empty.
    pub cv_sigma2: Vec<f64>,
}

impl Default for MiwaeSettings {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        MiwaeSettings {
            latent_dim: None,
            hidden: model.hidden,
            sigma2_prior: model.sigma2_prior,
            k: train.k,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            patience: train.patience.unwrap_or(0),
            cv_folds: 0,
            cv_latent_dims: Vec::new(),
            cv_sigma2: Vec::new(),
        }
    }
}

impl MiwaeSettings {
    pub fn model_config(&self, default_latent_dim: usize) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim.unwrap_or(default_latent_dim),
            hidden: self.hidden.clone(),
            sigma2_prior: self.sigma2_prior,
        }
    }

    /// Cross-validation grid, or `None` when cross-validation is off.
    pub fn cv_grid(&self, default_latent_dim: usize) -> Option<Vec<GridPoint>> {
        if self.cv_folds == 0 {
            return None;
        }
        let dims = if self.cv_latent_dims.is_empty() {
            vec![self.latent_dim.unwrap_or(default_latent_dim)]
        } else {
            self.cv_latent_dims.clone()
        };
        let vars = if self.cv_sigma2.is_empty() {
            vec![self.sigma2_prior]
        } else {
            self.cv_sigma2.clone()
        };
        Some(
            dims.iter()
                .flat_map(|&latent_dim| vars.iter().map(move |&sigma2_prior| GridPoint { sigma2_prior, latent_dim }))
                .collect(),
        )
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            k: self.k,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            patience: (self.patience > 0).then_some(self.patience),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdcSettings {
    /// Importance samples per row.
    pub l: usize,
    /// Posterior tables for `MDC.mi`.
    pub b: usize,
}

impl Default for MdcSettings {
    fn default() -> Self {
        MdcSettings { l: 10_000, b: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfSettings {
    /// Number of penalties in the geometric grid searched by hold-out.
    pub grid_size: usize,
    pub holdout_frac: f64,
    pub center: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MfSettings {
    fn default() -> Self {
        let si = SoftImputeConfig::default();
        MfSettings {
            grid_size: 10,
            holdout_frac: 0.1,
            center: si.center,
            max_iter: si.max_iter,
            tol: si.tol,
        }
    }
}

impl MfSettings {
    pub fn soft_impute_config(&self) -> SoftImputeConfig {
        SoftImputeConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            center: self.center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiSettings {
    pub m: usize,
    pub sweeps: usize,
    pub condition_on_outcome: bool,
    pub ridge_scale: f64,
}

impl Default for MiSettings {
    fn default() -> Self {
        let c = ImputeConfig::default();
        MiSettings {
            m: c.m,
            sweeps: c.sweeps,
            condition_on_outcome: c.condition_on_outcome,
            ridge_scale: c.ridge_scale,
        }
    }
}

impl MiSettings {
    pub fn impute_config(&self) -> ImputeConfig {
        ImputeConfig {
            m: self.m,
            sweeps: self.sweeps,
            condition_on_outcome: self.condition_on_outcome,
            ridge_scale: self.ridge_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuisanceSettings {
    /// Ridge-penalize nuisances with `λ = 0.01·n`; plain fits otherwise.
    pub regularized: bool,
    pub eta_clip: f64,
    /// Cross-fitting folds; 0 fits nuisances in-sample.
    pub cross_fit_folds: usize,
}

impl Default for NuisanceSettings {
    fn default() -> Self {
        NuisanceSettings {
            regularized: false,
            eta_clip: NuisanceConfig::default().eta_clip,
            cross_fit_folds: 0,
        }
    }
}

impl NuisanceSettings {
    pub fn lambda(&self, n: usize) -> f64 {
        if self.regularized {
            REGULARIZED_LAMBDA_PER_ROW * n as f64
        } else {
            0.0
        }
    }

    pub fn config(&self, n: usize, seed: u64) -> NuisanceConfig {
        NuisanceConfig {
            lambda: self.lambda(n),
            eta_clip: self.eta_clip,
            cross_fit_folds: (self.cross_fit_folds > 0).then_some(self.cross_fit_folds),
            cross_fit_seed: seed,
        }
    }
}

/// Settings for every method, as read by `estimate --config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSettings {
    pub miwae: MiwaeSettings,
    pub mdc: MdcSettings,
    pub mf: MfSettings,
    pub mi: MiSettings,
    pub nuisance: NuisanceSettings,
}

impl MethodSettings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mdc.b == 0 || self.mdc.l == 0 || self.mdc.b > self.mdc.l {
            return Err(Error::Config(format!(
                "mdc needs 1 ≤ b ≤ l, got b = {}, l = {}",
                self.mdc.b, self.mdc.l
            )));
        }
        if self.mf.grid_size == 0 || !(0.0..1.0).contains(&self.mf.holdout_frac) {
            return Err(Error::Config("mf needs grid_size ≥ 1 and holdout_frac in [0, 1)".into()));
        }
        if self.mi.m == 0 || self.mi.sweeps == 0 {
            return Err(Error::Config("mi needs m ≥ 1 and sweeps ≥ 1".into()));
        }
        if self.miwae.cv_folds == 1
            || self.miwae.cv_latent_dims.contains(&0)
            || self.miwae.cv_sigma2.iter().any(|&v| !(v > 0.0))
        {
            return Err(Error::Config("miwae cross-validation needs ≥ 2 folds and positive grid values".into()));
        }
        if self.miwae.latent_dim == Some(0) || self.miwae.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("miwae dimensions must be positive".into()));
        }
        self.miwae.train_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.nuisance
            .config(1, 0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Cartesian grid of simulation scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioGrid {
    pub covariate_model: Vec<CovariateModel>,
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub d: Vec<usize>,
    pub missing_prob: Vec<f64>,
    pub snr: Vec<f64>,
    pub tau: Vec<f64>,
    pub lrmf_noise_sd: f64,
    /// DLVM hidden width; `2·d` when absent.
    pub dlvm_hidden: Option<usize>,
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        ScenarioGrid {
            covariate_model: vec![CovariateModel::Lrmf],
            n: vec![1000],
            p: vec![10],
            d: vec![2],
            missing_prob: vec![0.0],
            snr: vec![10.0],
            tau: vec![1.0],
            lrmf_noise_sd: 0.1,
            dlvm_hidden: None,
        }
    }
}

/// One point of the scenario grid (a simulation config without its seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub covariate_model: CovariateModel,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub missing_prob: f64,
    pub snr: f64,
    pub tau: f64,
}

impl Scenario {
    /// Stable identifier used for seeding and in output tables.
    pub fn key(&self) -> String {
        format!(
            "{}-n{}-p{}-d{}-rho{}-snr{}-tau{}",
            self.covariate_model.name(),
            self.n,
            self.p,
            self.d,
            self.missing_prob,
            self.snr,
            self.tau
        )
    }
}

impl ScenarioGrid {
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &covariate_model in &self.covariate_model {
            for &n in &self.n {
                for &p in &self.p {
                    for &d in &self.d {
                        for &missing_prob in &self.missing_prob {
                            for &snr in &self.snr {
                                for &tau in &self.tau {
                                    out.push(Scenario {
                                        covariate_model,
                                        n,
                                        p,
                                        d,
                                        missing_prob,
                                        snr,
                                        tau,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn simulation_config(&self, s: &Scenario, seed: u64) -> SimulationConfig {
        SimulationConfig {
            n: s.n,
            p: s.p,
            d: s.d,
            covariate_model: s.covariate_model,
            missing_prob: s.missing_prob,
            snr: s.snr,
            tau: s.tau,
            seed,
            lrmf_noise_sd: self.lrmf_noise_sd,
            dlvm_hidden: self.dlvm_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub replications: usize,
    pub base_seed: u64,
    /// Cells evaluated concurrently.
    pub workers: usize,
    pub methods: Vec<Method>,
    pub estimators: Vec<EstimatorMode>,
    pub scenarios: ScenarioGrid,
    pub miwae: MiwaeSettings,
    pub mdc: MdcSettings,
    pub mf: MfSettings,
    pub mi: MiSettings,
    pub nuisance: NuisanceSettings,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            replications: 10,
            base_seed: 0,
            workers: 1,
            methods: Method::ALL.to_vec(),
            estimators: vec![EstimatorMode::Dr, EstimatorMode::Regression],
            scenarios: ScenarioGrid::default(),
            miwae: MiwaeSettings::default(),
            mdc: MdcSettings::default(),
            mf: MfSettings::default(),
            mi: MiSettings::default(),
            nuisance: NuisanceSettings::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn settings(&self) -> MethodSettings {
        MethodSettings {
            miwae: self.miwae.clone(),
            mdc: self.mdc.clone(),
            mf: self.mf.clone(),
            mi: self.mi.clone(),
            nuisance: self.nuisance.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.workers == 0 {
            return Err(Error::Config("replications and workers must be ≥ 1".into()));
        }
        if self.methods.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("plan needs at least one method and one estimator".into()));
        }
        let g = &self.scenarios;
        if [g.covariate_model.len(), g.n.len(), g.p.len(), g.d.len()].contains(&0)
            || [g.missing_prob.len(), g.snr.len(), g.tau.len()].contains(&0)
        {
            return Err(Error::Config("every scenario axis needs at least one value".into()));
        }
        for s in g.scenarios() {
            g.simulation_config(&s, 0)
                .validate()
                .map_err(|e| Error::Config(format!("scenario {}: {e}", s.key())))?;
        }
        self.settings().validate()
    }

    /// Seed of replication `rep` of `scenario`: `base ⊕ hash(scenario, rep)`.
    pub fn cell_seed(&self, scenario: &Scenario, rep: usize) -> u64 {
        self.base_seed ^ seed::hash_str(&format!("{}#{rep}", scenario.key()))
    }
}
