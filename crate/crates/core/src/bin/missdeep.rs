use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use missdeep::data::{ingest_csv, ObservationalDataset};
use missdeep::datagen::{simulate, CovariateModel, SimulationConfig};
use missdeep::estimators::{estimate, mdc_mi_on, EstimatorMode};
use missdeep::harness::{
    check_output_dir, emit_outputs, evaluate_dataset, in_sample_delta, read_table, run_plan, summarize,
    write_summary, ExperimentPlan, FailureRow, Method, MethodSettings, ResultRow, TimingRow, FAILURES_FILE,
    TIMINGS_FILE,
};
use missdeep::miwae::{cross_validate, posterior, train, write_trace_csv, GridPoint, LatentModel};
use missdeep::{seed, Error, Result};

#[derive(Parser)]
#[command(name = "missdeep", version, about = "Treatment effects with incomplete covariates via deep latent confounders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Train a MIWAE model on a dataset's covariates.
    FitMiwae(FitArgs),
    /// Run one or more methods on a dataset.
    Estimate(EstimateArgs),
    /// Run an experiment plan.
    Bench(BenchArgs),
    /// Recompute summary and plot files from a results table.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with simulation keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    covariate_model: Option<CovariateModel>,
    #[arg(long)]
    missing_prob: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lrmf_noise_sd: Option<f64>,
    #[arg(long)]
    dlvm_hidden: Option<usize>,
}

/// Overrides for the `[miwae]` settings.
#[derive(Args)]
struct MiwaeFlags {
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    sigma2_prior: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// TOML settings file (only `[miwae]` is used).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    miwae: MiwaeFlags,
    /// Write the per-epoch training bound here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Pick latent dimension and prior variance by this many folds.
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    cv_latent_dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    cv_sigma2: Vec<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "MDC.process,MDC.mi")]
    method: Vec<Method>,
    /// Comma-separated estimators.
    #[arg(long, value_delimiter = ',', default_value = "dr")]
    estimator: Vec<EstimatorMode>,
    #[arg(long)]
    seed: u64,
    /// Estimates CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML settings file with `[miwae]`, `[mdc]`, `[mf]`, `[mi]`, `[nuisance]`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use this trained model for the MDC methods instead of fitting one.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    miwae: MiwaeFlags,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    regularized: bool,
    #[arg(long)]
    eta_clip: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment plan (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the plan's base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// `results.csv` from a bench run; `timings.csv` and `failures.csv` next
    /// to it are used when present.
    #[arg(long)]
    results: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::FitMiwae(a) => cmd_fit(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Summarize(a) => cmd_summarize(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_simulate(a: SimulateArgs) -> Result<bool> {
    let mut cfg: SimulationConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => SimulationConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(seed, n, p, d, covariate_model, missing_prob, snr, tau, lrmf_noise_sd);
    if a.dlvm_hidden.is_some() {
        cfg.dlvm_hidden = a.dlvm_hidden;
    }
    let (ds, truth) = simulate(&cfg)?;
    ds.save_csv(&a.out)?;
    let (lo, hi) = truth.propensity_range();
    log::info!(
        "wrote {} rows to {} ({:.1}% missing, propensities in [{lo:.3}, {hi:.3}])",
        ds.n(),
        a.out.display(),
        100.0 * ds.x.missing_fraction()
    );
    Ok(true)
}

fn apply_miwae_flags(settings: &mut MethodSettings, f: &MiwaeFlags) {
    let m = &mut settings.miwae;
    if f.latent_dim.is_some() {
        m.latent_dim = f.latent_dim;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = f.$f.clone() { m.$f = v; })* };
    }
    set!(hidden, sigma2_prior, k, epochs, batch_size, learning_rate, patience);
}

fn load_settings(path: Option<&Path>) -> Result<MethodSettings> {
    match path {
        Some(p) => MethodSettings::load(p),
        None => Ok(MethodSettings::default()),
    }
}

fn load_dataset(path: &Path) -> Result<ObservationalDataset> {
    let (ds, report) = ingest_csv(path)?;
    log::info!(
        "{}: {} rows, {} covariates, {} missing cells",
        path.display(),
        report.rows,
        ds.p(),
        report.missing_cells
    );
    Ok(ds)
}

fn cmd_fit(a: FitArgs) -> Result<bool> {
    let mut settings = load_settings(a.config.as_deref())?;
    apply_miwae_flags(&mut settings, &a.miwae);
    settings.validate()?;
    let ds = load_dataset(&a.data)?;
    let default_dim = ds.z.as_ref().map_or(2, |z| z.ncols());
    let mut model_cfg = settings.miwae.model_config(default_dim);
    let train_cfg = settings.miwae.train_config(a.seed);
    if let Some(folds) = a.cv_folds {
        let grid: Vec<GridPoint> = a
            .cv_latent_dims
            .iter()
            .flat_map(|&d| a.cv_sigma2.iter().map(move |&s| GridPoint { sigma2_prior: s, latent_dim: d }))
            .collect();
        let cv = cross_validate(&ds.x, &grid, folds, &model_cfg, &train_cfg, train_cfg.k)?;
        for (point, score) in &cv.scores {
            log::info!("d = {}, σ² = {}: held-out bound {score:.4}", point.latent_dim, point.sigma2_prior);
        }
        model_cfg.latent_dim = cv.best.latent_dim;
        model_cfg.sigma2_prior = cv.best.sigma2_prior;
    }
    let (model, report) = train(&ds.x, &model_cfg, &train_cfg)?;
    let mut w = BufWriter::new(File::create(&a.out).map_err(|e| Error::io(&a.out, e))?);
    model.write_text(&mut w).map_err(|e| Error::io(&a.out, e))?;
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    if let Some(path) = &a.trace {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_trace_csv(&report.trace, BufWriter::new(f))?;
    }
    log::info!(
        "trained {} epochs (final bound {:.4}{}), model written to {}",
        report.trace.len(),
        report.trace.last().copied().unwrap_or(f64::NAN),
        if report.stopped_early { ", stopped early" } else { "" },
        a.out.display()
    );
    Ok(true)
}

/// One row of the `estimate` output.
#[derive(Serialize)]
struct EstimateRow {
    method: Method,
    mode: EstimatorMode,
    b: usize,
    l: usize,
    lambda: f64,
    tau_hat: f64,
    total_variance: f64,
    ci_low: f64,
    ci_high: f64,
    seed: u64,
    /// Error against the sample ATE when the file carries true surfaces.
    delta: Option<f64>,
}

fn cmd_estimate(a: EstimateArgs) -> Result<bool> {
    let mut settings = load_settings(a.config.as_deref())?;
    apply_miwae_flags(&mut settings, &a.miwae);
    if let Some(l) = a.l {
        settings.mdc.l = l;
    }
    if let Some(b) = a.b {
        settings.mdc.b = b;
    }
    if let Some(m) = a.m {
        settings.mi.m = m;
    }
    if let Some(eta) = a.eta_clip {
        settings.nuisance.eta_clip = eta;
    }
    settings.nuisance.regularized |= a.regularized;
    settings.validate()?;
    let ds = load_dataset(&a.data)?;
    let default_dim = ds.z.as_ref().map_or(2, |z| z.ncols());

    let mut rows = Vec::new();
    let mut ok = true;
    let mut push = |method: Method, mode: EstimatorMode, r: std::result::Result<missdeep::harness::MethodEstimate, String>| {
        match r {
            Ok(m) => {
                let delta = match (&ds.mu1, &ds.mu0) {
                    (Some(mu1), Some(mu0)) => in_sample_delta(m.estimate.tau_hat, mu1.view(), mu0.view()).ok(),
                    _ => None,
                };
                rows.push(EstimateRow {
                    method,
                    mode,
                    b: m.b,
                    l: m.l,
                    lambda: m.lambda,
                    tau_hat: m.estimate.tau_hat,
                    total_variance: m.estimate.total_variance,
                    ci_low: m.estimate.ci_95.0,
                    ci_high: m.estimate.ci_95.1,
                    seed: a.seed,
                    delta,
                });
            }
            Err(e) => {
                log::error!("{method} {}: {e}", mode.name());
                ok = false;
            }
        }
    };

    let (mdc, others): (Vec<Method>, Vec<Method>) = a
        .method
        .iter()
        .partition(|m| matches!(m, Method::MdcProcess | Method::MdcMi));
    if let (Some(path), false) = (&a.model, mdc.is_empty()) {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let model = LatentModel::read_text(&mut BufReader::new(f))?;
        let nuisance = settings.nuisance.config(ds.n(), seed::mix(a.seed, seed::hash_str("nuisance")));
        let b = if mdc.contains(&Method::MdcMi) { settings.mdc.b } else { 0 };
        let post = posterior(&model, &ds.x, settings.mdc.l, b, seed::mix(a.seed, seed::hash_str("mdc")))?;
        for &method in &mdc {
            for &mode in a.estimator.iter().filter(|&&m| method.supports(m)) {
                let est = match method {
                    Method::MdcProcess => estimate(&post.mean, &ds.w, &ds.y, mode, &nuisance),
                    _ => mdc_mi_on(post.draws.as_ref().expect("tables requested"), &ds.w, &ds.y, &nuisance),
                };
                push(
                    method,
                    mode,
                    est.map(|estimate| missdeep::harness::MethodEstimate {
                        estimate,
                        b: if method == Method::MdcMi { b } else { 1 },
                        l: settings.mdc.l,
                        lambda: nuisance.lambda,
                        converged: true,
                    })
                    .map_err(|e| e.to_string()),
                );
            }
        }
        for o in evaluate_dataset(&ds, &others, &a.estimator, &settings, default_dim, a.seed) {
            push(o.method, o.estimator, o.result);
        }
    } else {
        for o in evaluate_dataset(&ds, &a.method, &a.estimator, &settings, default_dim, a.seed) {
            push(o.method, o.estimator, o.result);
        }
    }

    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout()),
    };
    let label = a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut w = csv::Writer::from_writer(sink);
    for row in &rows {
        w.serialize(row).map_err(|e| Error::Config(format!("{}: {e}", label.display())))?;
    }
    w.flush().map_err(|e| Error::io(&label, e))?;
    Ok(ok)
}

fn cmd_bench(a: BenchArgs) -> Result<bool> {
    let mut plan = ExperimentPlan::load(&a.config)?;
    if let Some(s) = a.seed {
        plan.base_seed = s;
    }
    if let Some(w) = a.workers {
        plan.workers = w;
    }
    if let Some(r) = a.replications {
        plan.replications = r;
    }
    plan.validate()?;
    check_output_dir(&a.out)?;
    let run = run_plan(&plan)?;
    let summary = summarize(&run.results, &run.timings, &run.failures);
    let files = emit_outputs(&run, &summary, &a.out)?;
    for f in &files {
        log::info!("wrote {}", f.display());
    }
    if !run.failures.is_empty() {
        log::error!("{} cell(s) failed; see {}", run.failures.len(), a.out.join(FAILURES_FILE).display());
    }
    Ok(run.failures.is_empty())
}

fn cmd_summarize(a: SummarizeArgs) -> Result<bool> {
    let results: Vec<ResultRow> = read_table(&a.results)?;
    let dir = a.results.parent().unwrap_or(Path::new("."));
    let timings_path = dir.join(TIMINGS_FILE);
    let failures_path = dir.join(FAILURES_FILE);
    let timings: Vec<TimingRow> = if timings_path.exists() { read_table(&timings_path)? } else { vec![] };
    let failures: Vec<FailureRow> = if failures_path.exists() { read_table(&failures_path)? } else { vec![] };
    check_output_dir(&a.out)?;
    let summary = summarize(&results, &timings, &failures);
    for f in write_summary(&summary, &a.out)? {
        log::info!("wrote {}", f.display());
    }
    Ok(failures.is_empty())
}
