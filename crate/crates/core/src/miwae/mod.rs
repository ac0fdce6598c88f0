//! Deep latent-variable model for incomplete covariates.
//!
//! The decoder maps a code `z ∈ ℝ^d` to a diagonal Gaussian over the
//! (standardized) covariates; the encoder maps a zero-imputed row to a
//! diagonal Gaussian proposal over codes. Training maximizes the
//! importance-weighted bound on the likelihood of the *observed* coordinates
//! only. At inference the same proposal drives self-normalized importance
//! sampling of `Z | X*`, which yields posterior means and posterior resamples.

mod cv;
mod model;
mod objective;
mod posterior;
mod train;

pub use cv::{cross_validate, fold_assignment, CvResult, GridPoint};
pub use model::{zero_impute, LatentModel, ModelConfig, Standardizer};
pub use objective::{miwae_objective, miwae_objective_gradient, miwae_objective_with_mask, BoundGradients};
pub use posterior::{
    importance_weights, posterior, posterior_mean, posterior_resample, PosteriorDraws,
    PosteriorSummary, WeightedDraws,
};
pub use train::{train, write_trace_csv, TrainConfig, TrainReport};
