//! Treatment-effect estimators on complete features and the latent
//! confounder strategies built on top of them.

mod aipw;
mod mdc;
mod nuisance;
mod rubin;

use serde::{Deserialize, Serialize};

pub use aipw::{
    aipw, aipw_with_nuisances, fit_nuisances, regression_adjust, AteEstimate, NuisanceConfig,
    NuisancePredictions, Z_975,
};
pub use mdc::{estimate, mdc_mi, mdc_mi_on, mdc_process};
pub use nuisance::{fit_linear, fit_logistic, LinearModel};
pub use rubin::{aggregate_draws, rubin_aggregate};

use crate::error::Error;

/// Which complete-data estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// OLS coefficient of `W` in `Y ~ 1 + features + W`.
    Regression,
    /// Augmented inverse propensity weighting.
    Dr,
}

impl EstimatorMode {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::Regression => "regression",
            EstimatorMode::Dr => "dr",
        }
    }
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "regression" | "ols" => Ok(EstimatorMode::Regression),
            "dr" | "aipw" => Ok(EstimatorMode::Dr),
            other => Err(Error::InvalidInput(format!(
                "unknown estimator `{other}` (expected `regression` or `dr`)"
            ))),
        }
    }
}
