use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hilbert_tikhonov::diagnostics::{concentration_study, ConcentrationReport};
use hilbert_tikhonov::estimator::{check_condition_31, tikhonov_solve, LambdaRule, SolveOptions};
use hilbert_tikhonov::forward::OpConfig;
use hilbert_tikhonov::harness::{run_rate_study, saturation_contrast, Experiment, RateReport};
use hilbert_tikhonov::report::emit_report;
use hilbert_tikhonov::rkhs::{classify_decay, effective_dimension, log_grid, DecayRegime};
use hilbert_tikhonov::{Config, Kernel, Noise, Testbed};
use rand::Rng;
use serde::Serialize;

/// Hilbert-scale Tikhonov regularization on a spectral testbed.
#[derive(Parser, Debug)]
#[command(name = "htik", version)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Effective dimension over a λ grid.
    Effdim {
        /// Testbed spec (JSON); falls back to the config's testbed.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// `lo:hi:logK` or `lo:hi:linK`.
        #[arg(long, default_value = "1e-5:1e-1:log20")]
        lambda_grid: String,
        #[arg(long, default_value = "effdim.csv")]
        out: PathBuf,
    },
    /// One regularized solve on a synthetic sample.
    Solve(SolveArgs),
    /// Concentration diagnostics at the configured (m, λ).
    Diagnose {
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value = "diag.csv")]
        out: PathBuf,
    },
    /// Monte Carlo rate study; writes rates.csv, rates.svg and rates.json.
    Rates,
    /// Rate studies with the Hilbert-scale and identity penalties.
    Saturation,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    testbed: Option<PathBuf>,
    #[arg(long)]
    op: Option<PathBuf>,
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    m: usize,
    #[arg(long)]
    rule: Option<LambdaRule>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, default_value = "solve.json")]
    out: PathBuf,
}

/// Outcome of a subcommand that maps onto the process exit code.
enum Verdict {
    Pass,
    CheckFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<Verdict> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut config: Config = match &cli.config {
        Some(path) => read_json(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.root_seed = seed;
    }
    let out_dir = cli.out_dir.as_path();
    match cli.command {
        Command::Effdim { spec, lambda_grid, out } => {
            let spec: Testbed = match spec {
                Some(path) => read_json(&path)?,
                None => config.testbed,
            };
            effdim(&spec, &lambda_grid, &out_dir.join(out))
        }
        Command::Solve(args) => solve(config, args, out_dir),
        Command::Diagnose { trials, eta, out } => diagnose(&config, trials, eta, &out_dir.join(out)),
        Command::Rates => rates(&config, out_dir),
        Command::Saturation => saturation(&config, out_dir),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, spacing] = parts.as_slice() else {
        bail!("lambda grid must look like lo:hi:logK or lo:hi:linK, got {text:?}");
    };
    let lo: f64 = lo.parse().context("grid lower end")?;
    let hi: f64 = hi.parse().context("grid upper end")?;
    if !(lo > 0.0 && hi > lo) {
        bail!("lambda grid needs 0 < lo < hi, got {lo}:{hi}");
    }
    if let Some(k) = spacing.strip_prefix("log") {
        let k: usize = k.parse().context("grid size")?;
        Ok(log_grid(lo, hi, k))
    } else if let Some(k) = spacing.strip_prefix("lin") {
        let k: usize = k.parse().context("grid size")?;
        if k < 2 {
            bail!("linear grid needs at least 2 points");
        }
        Ok((0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect())
    } else {
        bail!("grid spacing must be logK or linK, got {spacing:?}")
    }
}

fn effdim(spec: &Testbed, grid: &str, out: &Path) -> Result<Verdict> {
    spec.validate()?;
    let lambdas = parse_grid(grid)?;
    let kernel = Kernel::new(spec);
    let kappa_sq = kernel.kappa_sq().grid_sup;
    let fit = classify_decay(kernel.mu(), &lambdas)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda", "n_eff", "trivial_bound", "regime_fit"])?;
    for &l in &lambdas {
        let n = effective_dimension(kernel.mu(), l)?;
        let predicted = fit.predict(l).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([l.to_string(), n.to_string(), (kappa_sq / l).to_string(), predicted])?;
    }
    write_bytes(out, &w.into_inner()?)?;
    let regime = match fit.regime {
        DecayRegime::Polynomial => "polynomial",
        DecayRegime::Logarithmic => "logarithmic",
        DecayRegime::Neither => "neither",
    };
    println!("regime {regime}, fitted b {:.4}", fit.b_hat);
    Ok(Verdict::Pass)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct SolveOutput {
    m: usize,
    rule: LambdaRule,
    lambda: f64,
    error_h: f64,
    converged: bool,
    iterations: usize,
    objective: f64,
    restart_objectives: Vec<f64>,
    condition_31: bool,
    n_eff: f64,
    f_hat: Vec<f64>,
    truth: Vec<f64>,
}

fn solve(mut config: Config, args: SolveArgs, out_dir: &Path) -> Result<Verdict> {
    if let Some(path) = &args.testbed {
        config.testbed = read_json(path)?;
    }
    if let Some(path) = &args.op {
        config.op = read_json::<OpConfig<f64>>(path)?;
    }
    if let Some(path) = &args.noise {
        config.noise = read_json::<Noise>(path)?;
    }
    if let Some(rule) = args.rule {
        config.rule = rule;
    }
    if let Some(p) = args.p {
        config.p = p;
        config.op.p = p;
    }
    if let Some(q) = args.q {
        config.q = q;
    }
    if let Some(b) = args.b {
        config.b = b;
    }
    let exp = Experiment::new(config)?;
    let lambda = exp.lambda(args.m)?;
    let (sample, mut rng) = exp.sample(args.m, 0)?;
    let opts = SolveOptions {
        seed: rng.random(),
        ..exp.config.solver
    };
    let res = tikhonov_solve(&exp.op, &sample, &exp.prior, lambda, &exp.penalty, &opts)?;
    let cond = check_condition_31(lambda, args.m, exp.op.mu())?;
    let output = SolveOutput {
        m: args.m,
        rule: exp.config.rule,
        lambda,
        error_h: res.f_hat.sub(&exp.truth).norm(),
        converged: res.converged,
        iterations: res.iterations,
        objective: res.objective(),
        restart_objectives: res.restart_objectives.clone(),
        condition_31: cond.holds,
        n_eff: cond.n_eff,
        f_hat: res.f_hat.coeffs.clone(),
        truth: exp.truth.coeffs.clone(),
    };
    write_json(&out_dir.join(&args.out), &output)?;
    println!(
        "lambda {:.6e}, error {:.6e}, {} iterations, converged {}",
        output.lambda, output.error_h, output.iterations, output.converged
    );
    Ok(if output.converged { Verdict::Pass } else { Verdict::CheckFailed })
}

fn diagnose(config: &Config, trials: usize, eta: f64, out: &Path) -> Result<Verdict> {
    let setup = config.concentration_setup()?;
    let report = concentration_study(&setup, trials, eta)?;
    write_bytes(out, &diagnostics_csv(&report)?)?;
    for c in &report.checks {
        println!(
            "{:<8} quantile {:.6e} bound {:.6e} {}",
            c.name,
            c.quantile,
            c.bound,
            if c.pass { "ok" } else { "EXCEEDED" }
        );
    }
    Ok(if report.passed() { Verdict::Pass } else { Verdict::CheckFailed })
}

const DIAG_COLUMNS: [&str; 4] = ["theta_z", "psi_x", "gamma_x", "hs_x"];

/// One row per trial, then a `quantile` row and a `bound` row.
fn diagnostics_csv(report: &ConcentrationReport<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "theta_z", "psi_x", "gamma_x", "hs_x"])?;
    for (i, t) in report.trials.iter().enumerate() {
        w.write_record([i.to_string(), t.theta_z.to_string(), t.psi_x.to_string(), t.gamma_x.to_string(), t.hs_x.to_string()])?;
    }
    let summary = |label: &str, pick: fn(&hilbert_tikhonov::diagnostics::QuantileCheck<f64>) -> f64| {
        let mut row = vec![label.to_string()];
        row.extend(
            DIAG_COLUMNS
                .iter()
                .map(|name| report.check(name).map(|c| pick(c).to_string()).unwrap_or_default()),
        );
        row
    };
    w.write_record(summary("quantile", |c| c.quantile))?;
    w.write_record(summary("bound", |c| c.bound))?;
    Ok(w.into_inner()?)
}

fn print_rates(label: &str, r: &RateReport<f64>) {
    for row in &r.rows {
        println!(
            "{label} m={:<6} lambda={:.4e} median={:.4e} converged={}/{}",
            row.m, row.lambda, row.err_median, row.n_converged, r.trials_per_m
        );
    }
    println!(
        "{label} slope {:.4} ± {:.4}, theoretical {:.4}, {}{}",
        r.fitted_slope,
        r.slope_se,
        r.theoretical,
        if r.pass { "pass" } else { "FAIL" },
        if r.reliable { "" } else { " (unreliable)" }
    );
}

fn rates(config: &Config, out_dir: &Path) -> Result<Verdict> {
    let report = run_rate_study(config)?;
    emit_report(&report, out_dir)?;
    write_json(&out_dir.join("rates.json"), &report)?;
    print_rates("rates", &report);
    Ok(if report.pass { Verdict::Pass } else { Verdict::CheckFailed })
}

fn saturation(config: &Config, out_dir: &Path) -> Result<Verdict> {
    let report = saturation_contrast(config)?;
    emit_report(&report.hilbert, &out_dir.join("hilbert"))?;
    emit_report(&report.standard, &out_dir.join("identity"))?;
    write_json(&out_dir.join("saturation.json"), &report)?;
    print_rates("hilbert", &report.hilbert);
    print_rates("identity", &report.standard);
    println!("saturation contrast {}", if report.holds { "holds" } else { "FAILS" });
    Ok(if report.holds { Verdict::Pass } else { Verdict::CheckFailed })
}
