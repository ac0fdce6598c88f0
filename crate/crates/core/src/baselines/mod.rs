//! Comparator methods: nuclear-norm matrix completion, chained-equation
//! multiple imputation, and mean imputation.

mod mice;
mod soft_impute;
mod svd;

pub use mice::{iterative_impute, mean_impute, mi_estimate, ColumnModel, ImputationSet, ImputeConfig};
pub use soft_impute::{
    choose_lambda, fitted_observed, lambda_grid, lambda_max, soft_impute, soft_impute_from, CompletionResult,
    LambdaChoice, SoftImputeConfig,
};
pub use svd::{svd, Svd};
