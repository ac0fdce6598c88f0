//! Executes methods on datasets and plans cell by cell.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{ExperimentPlan, Method, MethodSettings, Scenario};
use crate::baselines::{choose_lambda, iterative_impute, lambda_grid, mi_estimate, soft_impute};
use crate::data::ObservationalDataset;
use crate::datagen::{simulate, CovariateModel};
use crate::error::{Error, Result};
use crate::estimators::{estimate, mdc_mi_on, AteEstimate, EstimatorMode};
use crate::miwae::{cross_validate, posterior, train, ModelConfig, TrainConfig};
use crate::seed;

/// One method × estimator outcome on one dataset.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub estimator: EstimatorMode,
    pub result: Result<MethodEstimate, String>,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone)]
pub struct MethodEstimate {
    pub estimate: AteEstimate,
    /// Posterior tables (`MDC.mi`) or imputations (`MI`); 1 otherwise.
    pub b: usize,
    /// Importance samples per row for the MDC methods; 0 otherwise.
    pub l: usize,
    /// Nuisance ridge penalty.
    pub lambda: f64,
    /// Soft-impute convergence for `MF`; true for the other methods.
    pub converged: bool,
}

fn method_seed(data_seed: u64, component: &str) -> u64 {
    seed::mix(data_seed, seed::hash_str(component))
}

fn outcomes_for(
    method: Method,
    modes: &[EstimatorMode],
    started: Instant,
    fitted: Result<(Array2<f64>, MethodMeta)>,
    eval: impl Fn(&Array2<f64>, EstimatorMode) -> Result<AteEstimate>,
) -> Vec<MethodOutcome> {
    let shared = started.elapsed().as_secs_f64();
    let fitted = fitted.map_err(|e| e.to_string());
    modes
        .iter()
        .filter(|&&mode| method.supports(mode))
        .map(|&mode| {
            let t = Instant::now();
            let result = match &fitted {
                Ok((features, meta)) => eval(features, mode)
                    .map(|estimate| MethodEstimate {
                        estimate,
                        b: meta.b,
                        l: meta.l,
                        lambda: meta.lambda,
                        converged: meta.converged,
                    })
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            MethodOutcome {
                method,
                estimator: mode,
                result,
                runtime_secs: shared + t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct MethodMeta {
    b: usize,
    l: usize,
    lambda: f64,
    converged: bool,
}

/// Runs each requested method on `ds`. `latent_dim` is used for the MIWAE
/// fit when the settings leave it unset. Every method draws its randomness
/// from its own stream derived from `data_seed`, so dropping a method does
/// not change the others.
pub fn evaluate_dataset(
    ds: &ObservationalDataset,
    methods: &[Method],
    modes: &[EstimatorMode],
    settings: &MethodSettings,
    latent_dim: usize,
    data_seed: u64,
) -> Vec<MethodOutcome> {
    let n = ds.n();
    let nuisance = settings.nuisance.config(n, method_seed(data_seed, "nuisance"));
    let lambda = nuisance.lambda;
    let single = |converged| MethodMeta {
        b: 1,
        l: 0,
        lambda,
        converged,
    };
    let mut out = Vec::new();
    let plain = |features: &Array2<f64>, mode: EstimatorMode| estimate(features, &ds.w, &ds.y, mode, &nuisance);

    for &method in methods {
        let started = Instant::now();
        match method {
            Method::ZOracle => {
                let z = ds
                    .z
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("dataset carries no latent confounders".into()));
                out.extend(outcomes_for(method, modes, started, z.map(|z| (z, single(true))), plain));
            }
            Method::XComplete => {
                let x = ds
                    .x_complete
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("dataset carries no complete covariates".into()));
                out.extend(outcomes_for(method, modes, started, x.map(|x| (x, single(true))), plain));
            }
            Method::MdcProcess | Method::MdcMi => {
                // Both MDC methods share one fit and one posterior pass.
                if method == Method::MdcMi && methods.contains(&Method::MdcProcess) {
                    continue;
                }
                let wanted: Vec<Method> = [Method::MdcProcess, Method::MdcMi]
                    .into_iter()
                    .filter(|m| methods.contains(m))
                    .collect();
                out.extend(run_mdc(ds, &wanted, modes, settings, latent_dim, data_seed, &nuisance));
            }
            Method::Mi => {
                let fitted = iterative_impute(
                    &ds.x,
                    &ds.w,
                    &ds.y,
                    &settings.mi.impute_config(),
                    method_seed(data_seed, "mi"),
                );
                let (set, meta) = match fitted {
                    Ok(set) => {
                        let meta = MethodMeta {
                            b: set.tables.len(),
                            ..single(true)
                        };
                        (Ok(set), meta)
                    }
                    Err(e) => (Err(e), single(true)),
                };
                let shared = started.elapsed().as_secs_f64();
                for &mode in modes {
                    let t = Instant::now();
                    let result = match &set {
                        Ok(set) => mi_estimate(set, &ds.w, &ds.y, mode, &nuisance)
                            .map(|estimate| MethodEstimate {
                                estimate,
                                b: meta.b,
                                l: 0,
                                lambda,
                                converged: true,
                            })
                            .map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    out.push(MethodOutcome {
                        method,
                        estimator: mode,
                        result,
                        runtime_secs: shared + t.elapsed().as_secs_f64(),
                    });
                }
            }
            Method::Mf => {
                let fitted = fit_mf(ds, settings, method_seed(data_seed, "mf")).map(|(z, converged)| (z, single(converged)));
                out.extend(outcomes_for(method, modes, started, fitted, plain));
            }
        }
    }
    out
}

/// Latent estimate `U·diag(s)` from soft-impute at the hold-out-selected penalty.
fn fit_mf(ds: &ObservationalDataset, settings: &MethodSettings, seed_value: u64) -> Result<(Array2<f64>, bool)> {
    let cfg = settings.mf.soft_impute_config();
    let grid = lambda_grid(&ds.x, settings.mf.grid_size, cfg.center)?;
    let choice = choose_lambda(&ds.x, &grid, settings.mf.holdout_frac, &cfg, seed_value)?;
    let fit = soft_impute(&ds.x, choice.lambda, &cfg)?;
    log::debug!(
        "soft-impute λ = {:.4}, rank {}, {} iterations",
        choice.lambda,
        fit.effective_rank,
        fit.iterations
    );
    Ok((fit.latent, fit.converged))
}

fn select_model_config(
    ds: &ObservationalDataset,
    settings: &MethodSettings,
    latent_dim: usize,
    train_cfg: &TrainConfig,
) -> Result<ModelConfig> {
    let mut model_cfg = settings.miwae.model_config(latent_dim);
    if let Some(grid) = settings.miwae.cv_grid(latent_dim) {
        let cv = cross_validate(&ds.x, &grid, settings.miwae.cv_folds, &model_cfg, train_cfg, train_cfg.k)?;
        model_cfg.latent_dim = cv.best.latent_dim;
        model_cfg.sigma2_prior = cv.best.sigma2_prior;
    }
    Ok(model_cfg)
}

fn run_mdc(
    ds: &ObservationalDataset,
    wanted: &[Method],
    modes: &[EstimatorMode],
    settings: &MethodSettings,
    latent_dim: usize,
    data_seed: u64,
    nuisance: &crate::estimators::NuisanceConfig,
) -> Vec<MethodOutcome> {
    let started = Instant::now();
    let l = settings.mdc.l;
    let b = if wanted.contains(&Method::MdcMi) { settings.mdc.b } else { 0 };
    let train_cfg = settings.miwae.train_config(method_seed(data_seed, "miwae"));
    let fitted = select_model_config(ds, settings, latent_dim, &train_cfg)
        .and_then(|model_cfg| train(&ds.x, &model_cfg, &train_cfg))
        .and_then(|(model, _)| posterior(&model, &ds.x, l, b, method_seed(data_seed, "mdc")));
    let shared = started.elapsed().as_secs_f64();
    let mut out = Vec::new();
    for &method in wanted {
        for &mode in modes.iter().filter(|&&m| method.supports(m)) {
            let t = Instant::now();
            let result = match &fitted {
                Err(e) => Err(e.to_string()),
                Ok(post) => {
                    let est = match method {
                        Method::MdcProcess => estimate(&post.mean, &ds.w, &ds.y, mode, nuisance),
                        _ => mdc_mi_on(post.draws.as_ref().expect("tables requested"), &ds.w, &ds.y, nuisance),
                    };
                    est.map(|estimate| MethodEstimate {
                        estimate,
                        b: if method == Method::MdcMi { b } else { 1 },
                        l,
                        lambda: nuisance.lambda,
                        converged: true,
                    })
                    .map_err(|e| e.to_string())
                }
            };
            out.push(MethodOutcome {
                method,
                estimator: mode,
                result,
                runtime_secs: shared + t.elapsed().as_secs_f64(),
            });
        }
    }
    out
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub covariate_model: CovariateModel,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub missing_prob: f64,
    pub snr: f64,
    pub tau: f64,
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub estimator: EstimatorMode,
    pub b: usize,
    pub l: usize,
    pub lambda: f64,
    pub tau_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub converged: bool,
}

impl ResultRow {
    pub fn scenario_descriptor(&self) -> Scenario {
        Scenario {
            covariate_model: self.covariate_model,
            n: self.n,
            p: self.p,
            d: self.d,
            missing_prob: self.missing_prob,
            snr: self.snr,
            tau: self.tau,
        }
    }
}

/// Wall-clock time of one result row, kept apart so `results.csv` stays
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scenario: String,
    pub replication: usize,
    pub method: Method,
    pub estimator: EstimatorMode,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub scenario: String,
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub estimator: Option<EstimatorMode>,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub results: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub failures: Vec<FailureRow>,
}

impl RunOutput {
    fn extend(&mut self, other: RunOutput) {
        self.results.extend(other.results);
        self.timings.extend(other.timings);
        self.failures.extend(other.failures);
    }
}

fn run_cell(plan: &ExperimentPlan, scenario: &Scenario, rep: usize) -> RunOutput {
    let cell_seed = plan.cell_seed(scenario, rep);
    let key = scenario.key();
    let mut out = RunOutput::default();
    let cfg = plan.scenarios.simulation_config(scenario, cell_seed);
    let ds = match simulate(&cfg) {
        Ok((ds, _)) => ds,
        Err(e) => {
            log::warn!("{key} rep {rep}: data generation failed: {e}");
            for &method in &plan.methods {
                out.failures.push(FailureRow {
                    scenario: key.clone(),
                    replication: rep,
                    seed: cell_seed,
                    method,
                    estimator: None,
                    error: format!("data generation: {e}"),
                });
            }
            return out;
        }
    };
    let outcomes = evaluate_dataset(&ds, &plan.methods, &plan.estimators, &plan.settings(), scenario.d, cell_seed);
    for o in outcomes {
        match o.result {
            Ok(m) => {
                out.results.push(ResultRow {
                    scenario: key.clone(),
                    covariate_model: scenario.covariate_model,
                    n: scenario.n,
                    p: scenario.p,
                    d: scenario.d,
                    missing_prob: scenario.missing_prob,
                    snr: scenario.snr,
                    tau: scenario.tau,
                    replication: rep,
                    seed: cell_seed,
                    method: o.method,
                    estimator: o.estimator,
                    b: m.b,
                    l: m.l,
                    lambda: m.lambda,
                    tau_hat: m.estimate.tau_hat,
                    variance: m.estimate.total_variance,
                    ci_low: m.estimate.ci_95.0,
                    ci_high: m.estimate.ci_95.1,
                    converged: m.converged,
                });
                out.timings.push(TimingRow {
                    scenario: key.clone(),
                    replication: rep,
                    method: o.method,
                    estimator: o.estimator,
                    runtime_secs: o.runtime_secs,
                });
            }
            Err(error) => {
                log::warn!("{key} rep {rep} {} {}: {error}", o.method, o.estimator.name());
                out.failures.push(FailureRow {
                    scenario: key.clone(),
                    replication: rep,
                    seed: cell_seed,
                    method: o.method,
                    estimator: Some(o.estimator),
                    error,
                });
            }
        }
    }
    out
}

/// Runs every `(scenario, replication)` cell with `plan.workers` concurrent
/// workers. Rows come back in plan order whatever the worker count.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RunOutput> {
    plan.validate()?;
    let cells: Vec<(Scenario, usize)> = plan
        .scenarios
        .scenarios()
        .into_iter()
        .flat_map(|s| (0..plan.replications).map(move |r| (s.clone(), r)))
        .collect();
    let total = cells.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let parts: Vec<RunOutput> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, (s, r))| {
                let t = Instant::now();
                let out = run_cell(plan, s, *r);
                log::info!(
                    "cell {}/{total} {} rep {r}: {:.1}s",
                    i + 1,
                    s.key(),
                    t.elapsed().as_secs_f64()
                );
                out
            })
            .collect()
    });
    let mut out = RunOutput::default();
    for part in parts {
        out.extend(part);
    }
    Ok(out)
}

/// Fails early when `dir` cannot hold the output files.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-check");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}
