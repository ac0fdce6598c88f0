//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --release --test acceptance`. The full run trains
//! several hundred small models and takes roughly twenty minutes on one core.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use missdeep::baselines::{lambda_max, soft_impute, SoftImputeConfig};
use missdeep::data::IncompleteMatrix;
use missdeep::datagen::{apply_mcar, gen_latent, gen_lrmf, simulate, CovariateModel, SimulationConfig};
use missdeep::estimators::{aggregate_draws, aipw_with_nuisances, rubin_aggregate, AteEstimate, EstimatorMode};
use missdeep::harness::{run_plan, summarize, ExperimentPlan, Method, SummaryRow};
use missdeep::miwae::{
    importance_weights, miwae_objective, miwae_objective_gradient, LatentModel, ModelConfig, Standardizer,
};
use missdeep::nn::{gradient, Activation, Dense, DenseNetwork, Gradients};
use missdeep::seed;
use ndarray::{array, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

fn plans_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans")
}

fn load_plan(name: &str) -> ExperimentPlan {
    ExperimentPlan::load(&plans_dir().join(name)).expect("shipped plan parses")
}

fn within_time(start: Instant, limit_secs: f64, detail: String) -> Check {
    let secs = start.elapsed().as_secs_f64();
    if secs < limit_secs {
        Ok(format!("{detail}; {secs:.1} s"))
    } else {
        Err(format!("{detail}; {secs:.1} s exceeds {limit_secs} s"))
    }
}

fn flatten(g: &Gradients) -> Vec<f64> {
    g.weights
        .iter()
        .zip(&g.biases)
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
        .collect()
}

fn param_locations(net: &DenseNetwork) -> Vec<(usize, bool, usize)> {
    let mut out = Vec::new();
    for (k, layer) in net.layers().iter().enumerate() {
        out.extend((0..layer.weight.len()).map(|i| (k, false, i)));
        out.extend((0..layer.bias.len()).map(|i| (k, true, i)));
    }
    out
}

fn param_mut(net: &mut DenseNetwork, (k, is_bias, idx): (usize, bool, usize)) -> &mut f64 {
    let layer = &mut net.layers_mut()[k];
    if is_bias {
        &mut layer.bias[idx]
    } else {
        let c = layer.weight.ncols();
        &mut layer.weight[[idx / c, idx % c]]
    }
}

fn network(m: &mut LatentModel, decoder: bool) -> &mut DenseNetwork {
    if decoder {
        &mut m.decoder
    } else {
        &mut m.encoder
    }
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn smooth_loss(out: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let value = out.iter().map(|o| o.sin() + 0.5 * o * o).sum();
    (value, out.mapv(|o| o.cos() + o))
}

/// Random dense networks and random small encoder/decoder pairs, checked
/// against central differences.
fn gradient_correctness() -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(1..=4)];
        sizes.extend((0..depth).map(|_| rng.gen_range(1..=5)));
        let mut net = DenseNetwork::init(&sizes, Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
        let input = Array2::from_shape_fn((3, sizes[0]), |_| rng.sample(StandardNormal));
        let (_, analytic) = gradient(&net, input.view(), &smooth_loss).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = param_locations(&net)
            .into_iter()
            .map(|loc| {
                let eval = |delta: f64| {
                    let mut n = net.clone();
                    *param_mut(&mut n, loc) += delta;
                    smooth_loss(n.forward(input.view()).unwrap().view()).0
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(relative_error(&flatten(&analytic), &numeric));
    }
    for trial in 0..50u64 {
        let p = rng.gen_range(2..=5);
        let z = gen_latent(5, 2, trial);
        let x = apply_mcar(&gen_lrmf(&z, p, 0.3, trial + 50), 0.3, trial + 100).unwrap();
        if x.observed_column_stats().is_err() {
            continue;
        }
        let cfg = ModelConfig {
            latent_dim: rng.gen_range(1..=2),
            hidden: vec![rng.gen_range(2..=5)],
            sigma2_prior: rng.gen_range(0.5..2.0),
        };
        let model = LatentModel::init(Standardizer::fit(&x).unwrap(), &cfg, &mut rng).unwrap();
        let (_, grads) = miwae_objective_gradient(&model, &x, 3, trial).unwrap();
        let h = 1e-6;
        let mut numeric = Vec::new();
        for decoder in [false, true] {
            for loc in param_locations(network(&mut model.clone(), decoder)) {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    *param_mut(network(&mut m, decoder), loc) += delta;
                    miwae_objective(&m, &x, 3, trial).unwrap()
                };
                numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        let mut analytic = flatten(&grads.encoder);
        analytic.extend(flatten(&grads.decoder));
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    let detail = format!("worst relative error {worst:.2e} over 50 networks and 50 encoder/decoder pairs");
    if worst < 1e-5 {
        within_time(start, 10.0, detail)
    } else {
        Err(detail)
    }
}

fn conjugate_posterior() -> Check {
    let start = Instant::now();
    let (a, b, s2, prior) = ([1.5, -0.7], [0.2, 0.0], [0.5, 0.8], 1.0);
    let encoder = DenseNetwork::new(vec![Dense {
        weight: Array2::zeros((2, 2)),
        bias: Array1::zeros(2),
        activation: Activation::Identity,
    }])
    .unwrap();
    let decoder = DenseNetwork::new(vec![Dense {
        weight: array![[a[0]], [a[1]], [0.0], [0.0]],
        bias: array![b[0], b[1], f64::ln(s2[0]), f64::ln(s2[1])],
        activation: Activation::Identity,
    }])
    .unwrap();
    let model = LatentModel::new(encoder, decoder, prior, Standardizer::identity(2)).unwrap();
    let mut worst: f64 = 0.0;
    for x1 in [-1.0, 0.4, 1.1] {
        let x = IncompleteMatrix::new(array![[x1, f64::NAN]], array![[false, true]]).unwrap();
        let var = 1.0 / (1.0 / prior + a[0] * a[0] / s2[0]);
        let mean = var * a[0] * (x1 - b[0]) / s2[0];
        let (mut m, mut v) = (0.0, 0.0);
        for s in 0..20 {
            let wd = importance_weights(&model, &x, 0, 10_000, s).unwrap();
            m += wd.weighted_mean()[0] / 20.0;
            v += wd.weighted_variance()[0] / 20.0;
        }
        worst = worst.max((m - mean).abs()).max((v - var).abs());
    }
    let detail = format!("worst absolute error {worst:.4} in posterior mean/variance");
    if worst < 0.05 {
        within_time(start, 30.0, detail)
    } else {
        Err(detail)
    }
}

fn weight_normalization() -> Check {
    let z = gen_latent(1000, 2, 3);
    let x = apply_mcar(&gen_lrmf(&z, 6, 0.3, 4), 0.3, 5).unwrap();
    let cfg = ModelConfig {
        latent_dim: 2,
        hidden: vec![8],
        sigma2_prior: 1.0,
    };
    let model = LatentModel::init(Standardizer::fit(&x).unwrap(), &cfg, &mut seed::rng(6)).unwrap();
    let mut worst: f64 = 0.0;
    for row in 0..1000 {
        let wd = importance_weights(&model, &x, row, 50, 7).unwrap();
        worst = worst.max((wd.weights.sum() - 1.0).abs());
        let single = importance_weights(&model, &x, row, 1, 7).unwrap();
        if single.weights[0] != 1.0 {
            return Err(format!("row {row}: L=1 weight is {}", single.weights[0]));
        }
    }
    let detail = format!("max |Σw − 1| = {worst:.1e} over 1000 rows; L=1 gives w=1");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn group<'a>(summary: &'a [SummaryRow], method: Method, rho: f64) -> Result<&'a SummaryRow, String> {
    summary
        .iter()
        .find(|s| s.method == method && s.missing_prob == rho && s.estimator == EstimatorMode::Dr)
        .ok_or_else(|| format!("no successful {method} rows at rho={rho}"))
}

fn z_oracle() -> Check {
    let start = Instant::now();
    let mut plan = load_plan("desk.toml");
    plan.scenarios.p = vec![10];
    plan.scenarios.missing_prob = vec![0.0];
    plan.methods = vec![Method::ZOracle];
    plan.estimators = vec![EstimatorMode::Dr];
    let run = run_plan(&plan).map_err(|e| e.to_string())?;
    let summary = summarize(&run.results, &run.timings, &run.failures);
    let s = group(&summary, Method::ZOracle, 0.0)?;
    let detail = format!("bias {:+.4} over {} replications", s.bias, s.completed);
    if s.bias.abs() < 0.1 && s.completed == 10 {
        within_time(start, 120.0, detail)
    } else {
        Err(detail)
    }
}

/// LRMF, p=10, ρ ∈ {0, 0.3, 0.5}: MDC methods with DR.
fn lrmf_mdc_run() -> Result<(Vec<SummaryRow>, f64, usize), String> {
    let start = Instant::now();
    let mut plan = load_plan("desk.toml");
    plan.scenarios.p = vec![10];
    plan.scenarios.missing_prob = vec![0.0, 0.3, 0.5];
    plan.methods = vec![Method::MdcProcess, Method::MdcMi];
    plan.estimators = vec![EstimatorMode::Dr];
    let run = run_plan(&plan).map_err(|e| e.to_string())?;
    Ok((
        summarize(&run.results, &run.timings, &run.failures),
        start.elapsed().as_secs_f64(),
        plan.mdc.b,
    ))
}

fn lrmf_unbiasedness(run: &Result<(Vec<SummaryRow>, f64, usize), String>) -> Check {
    let (summary, secs, b) = run.as_ref().map_err(Clone::clone)?;
    if *b != 50 {
        return Err(format!("desk plan uses B={b}, expected 50"));
    }
    let mut parts = Vec::new();
    let mut ok = true;
    for method in [Method::MdcProcess, Method::MdcMi] {
        for rho in [0.3, 0.5] {
            let s = group(summary, method, rho)?;
            ok &= s.bias.abs() < 0.15 && s.completed == 10;
            parts.push(format!("{method}@{rho} bias {:+.4} (R={})", s.bias, s.completed));
        }
    }
    let detail = format!("{}; {secs:.1} s", parts.join(", "));
    if ok && *secs < 1200.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dlvm_ordering() -> Check {
    let start = Instant::now();
    let mut plan = load_plan("dlvm.toml");
    plan.methods = vec![Method::MdcProcess, Method::MdcMi, Method::Mf];
    plan.estimators = vec![EstimatorMode::Dr];
    let run = run_plan(&plan).map_err(|e| e.to_string())?;
    let summary = summarize(&run.results, &run.timings, &run.failures);
    let rho = plan.scenarios.missing_prob[0];
    let mse = |m| group(&summary, m, rho).map(|s| (s.mse, s.completed));
    let (mf, _) = mse(Method::Mf)?;
    let (mi, _) = mse(Method::MdcMi)?;
    let (process, _) = mse(Method::MdcProcess)?;
    let detail = format!(
        "MSE MDC.mi {mi:.5} {} MF {mf:.5}; MDC.process {process:.5} {} MF",
        if mi < mf { "<" } else { "≥" },
        if process < mf { "<" } else { "≥" }
    );
    if mi < mf && process < mf {
        within_time(start, 2700.0, detail)
    } else {
        Err(format!("{detail}; {:.1} s", start.elapsed().as_secs_f64()))
    }
}

fn degradation(run: &Result<(Vec<SummaryRow>, f64, usize), String>) -> Check {
    let (summary, _, _) = run.as_ref().map_err(Clone::clone)?;
    let full = group(summary, Method::MdcMi, 0.0)?;
    let half = group(summary, Method::MdcMi, 0.5)?;
    let detail = format!(
        "MDC.mi MSE {:.5} at rho=0.5 vs {:.5} ± {:.5} at rho=0",
        half.mse, full.mse, full.mse_se
    );
    if half.mse >= full.mse - full.mse_se {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn double_robustness() -> Check {
    let (mut bias_ps, mut bias_out) = (0.0, 0.0);
    for s in 0..20 {
        let mut cfg = SimulationConfig::new(5000, 10, 2, CovariateModel::Lrmf);
        cfg.seed = 500 + s;
        let (ds, truth) = simulate(&cfg).map_err(|e| e.to_string())?;
        let zero = Array1::zeros(ds.n());
        let est = aipw_with_nuisances(ds.w.view(), ds.y.view(), truth.propensities.view(), zero.view(), zero.view(), 0.01)
            .map_err(|e| e.to_string())?;
        bias_ps += (est.tau_hat - cfg.tau) / 20.0;
        let half = Array1::from_elem(ds.n(), 0.5);
        let (mu0, mu1) = (ds.mu0.as_ref().unwrap(), ds.mu1.as_ref().unwrap());
        let est = aipw_with_nuisances(ds.w.view(), ds.y.view(), half.view(), mu0.view(), mu1.view(), 0.01)
            .map_err(|e| e.to_string())?;
        bias_out += (est.tau_hat - cfg.tau) / 20.0;
    }
    let detail = format!("bias {bias_ps:+.4} (true propensity), {bias_out:+.4} (true outcomes)");
    if bias_ps.abs() < 0.1 && bias_out.abs() < 0.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn soft_impute_checks() -> Check {
    let mut increases = 0;
    for s in 0..20u64 {
        let mut rng = seed::rng(200 + s);
        let (n, p) = (rng.gen_range(10..40), rng.gen_range(5..15));
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let xs = apply_mcar(&x, 0.3, s).map_err(|e| e.to_string())?;
        let lambda = rng.gen_range(0.05..0.8) * lambda_max(&xs, true).map_err(|e| e.to_string())?;
        let fit = soft_impute(&xs, lambda, &SoftImputeConfig::default()).map_err(|e| e.to_string())?;
        increases += fit.objective_trace.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
    }
    let mut rng = seed::rng(300);
    let u = Array1::from_shape_fn(60, |_| rng.sample::<f64, _>(StandardNormal));
    let v = Array1::from_shape_fn(40, |_| rng.sample::<f64, _>(StandardNormal));
    let x = Array2::from_shape_fn((60, 40), |(i, j)| u[i] * v[j]);
    let xs = apply_mcar(&x, 0.2, 301).map_err(|e| e.to_string())?;
    let cfg = SoftImputeConfig {
        max_iter: 5000,
        tol: 1e-12,
        center: false,
    };
    let lambda = 1e-3 * lambda_max(&xs, false).map_err(|e| e.to_string())?;
    let fit = soft_impute(&xs, lambda, &cfg).map_err(|e| e.to_string())?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((i, j), &m) in xs.mask().indexed_iter() {
        if m {
            num += (fit.completed[[i, j]] - x[[i, j]]).powi(2);
            den += x[[i, j]].powi(2);
        }
    }
    let err = (num / den).sqrt();
    let detail = format!("{increases} objective increases over 20 problems; rank-1 masked relative error {err:.4}");
    if increases == 0 && err < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mi_consistency() -> Check {
    let mut plan = load_plan("desk.toml");
    plan.scenarios.n = vec![5000];
    plan.scenarios.p = vec![10];
    plan.scenarios.missing_prob = vec![0.3];
    plan.methods = vec![Method::Mi];
    plan.estimators = vec![EstimatorMode::Dr];
    let run = run_plan(&plan).map_err(|e| e.to_string())?;
    let summary = summarize(&run.results, &run.timings, &run.failures);
    let s = group(&summary, Method::Mi, 0.3)?;
    let detail = format!("MI-DR bias {:+.4} over {} replications", s.bias, s.completed);
    if s.bias.abs() < 0.1 && s.completed == 10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rubin() -> Check {
    let pooled = rubin_aggregate(&[0.0, 2.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let hand = (pooled.tau_hat, pooled.within_variance, pooled.between_variance, pooled.total_variance);
    if hand != (1.0, 1.0, 2.0, 4.0) {
        return Err(format!("hand example gives {hand:?}, expected (1, 1, 2, 4)"));
    }
    let single = AteEstimate::single(0.123_456_789, 0.010_203_04);
    let pooled = aggregate_draws(std::slice::from_ref(&single)).map_err(|e| e.to_string())?;
    let bits = |e: &AteEstimate| {
        [e.tau_hat, e.total_variance, e.ci_95.0, e.ci_95.1].map(f64::to_bits)
    };
    if bits(&pooled) != bits(&single) {
        return Err("B=1 aggregation differs from the single estimate".into());
    }
    Ok("(0,2) with within (1,1) pools to τ=1, T=4; B=1 is bit-identical".into())
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let plan = plans_dir().join("desk.toml");
    let mut bytes = Vec::new();
    for run in ["first", "second"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_missdeep"))
            .env("RUST_LOG", "warn")
            .arg("bench")
            .arg("--config")
            .arg(&plan)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("{run} bench run exited with {status}"));
        }
        bytes.push(std::fs::read(out.join("results.csv")).map_err(|e| e.to_string())?);
    }
    let lines = bytes[0].iter().filter(|&&b| b == b'\n').count();
    if bytes[0] == bytes[1] {
        Ok(format!("results.csv identical across two runs ({lines} lines)"))
    } else {
        Err("results.csv differs between runs".into())
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u8, name: &str, check: Check| {
        let (tag, detail) = match check {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} {tag} {name}: {detail}");
    };
    report(1, "gradient correctness", gradient_correctness());
    report(2, "conjugate posterior oracle", conjugate_posterior());
    report(3, "weight normalization", weight_normalization());
    report(4, "Z-oracle sanity", z_oracle());
    let lrmf = lrmf_mdc_run();
    report(5, "LRMF desk-scale unbiasedness", lrmf_unbiasedness(&lrmf));
    report(6, "DLVM ordering", dlvm_ordering());
    report(7, "degradation with missingness", degradation(&lrmf));
    report(8, "double robustness", double_robustness());
    report(9, "soft-impute", soft_impute_checks());
    report(10, "MI consistency regime", mi_consistency());
    report(11, "Rubin aggregation", rubin());
    report(12, "determinism", determinism());
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
