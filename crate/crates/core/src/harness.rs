//! Monte Carlo rate studies: ground truth with prescribed smoothness,
//! per-trial solves, slope fits and the saturation comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::ConcentrationSetup;
use crate::error::{Error, Result};
use crate::estimator::{
    check_condition_31, lambda_apriori, tikhonov_solve, LambdaRule, Penalty, RuleParams, Sample, SolveOptions,
};
use crate::forward::{ForwardOp, OpConfig};
use crate::noise::NoiseModel;
use crate::rkhs::DesignPoints;
use crate::rng::trial_rng;
use crate::scalar::Real;
use crate::stats::{linear_fit, median, quantile};
use crate::testbed::{CoefVector, Space, TestbedSpec};

/// Smoothness margin in the truth's decay `j^-(aq + 1/2 + TRUTH_MARGIN)`.
pub const TRUTH_MARGIN: f64 = 0.01;
/// Fraction of converged trials required at every `m`.
pub const MIN_CONVERGED_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig<T> {
    pub m: usize,
    pub lambda: T,
}

impl<T: Real> Default for DiagnosticsConfig<T> {
    fn default() -> Self {
        Self {
            m: 1000,
            lambda: T::lit(0.01),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct ExperimentConfig<T> {
    #[serde(default)]
    pub testbed: TestbedSpec<T>,
    #[serde(default)]
    pub op: OpConfig<T>,
    #[serde(default)]
    pub noise: NoiseModel<T>,
    pub p: T,
    pub q: T,
    #[serde(default = "default_b")]
    pub b: T,
    pub rule: LambdaRule,
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials_per_m: usize,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default)]
    pub solver: SolveOptions<T>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig<T>,
}

fn default_b<T: Real>() -> T {
    T::lit(0.5)
}

fn default_m_grid() -> Vec<usize> {
    vec![250, 500, 1000, 2000, 4000, 8000, 16000]
}

fn default_trials() -> usize {
    50
}

impl<T: Real> Default for ExperimentConfig<T> {
    fn default() -> Self {
        Self {
            testbed: TestbedSpec::default(),
            op: OpConfig::default(),
            noise: NoiseModel::default(),
            p: T::one(),
            q: T::lit(2.0),
            b: default_b(),
            rule: LambdaRule::Poly,
            m_grid: default_m_grid(),
            trials_per_m: default_trials(),
            root_seed: 0,
            solver: SolveOptions::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl<T: Real> ExperimentConfig<T> {
    pub fn rule_params(&self) -> RuleParams<T> {
        RuleParams {
            p: self.p,
            q: self.q,
            b: self.b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.testbed.validate()?;
        self.noise.validate()?;
        self.rule_params().validate()?;
        if self.op.p != self.p {
            return Err(Error::InvalidConfig(format!(
                "operator smoothing p={} differs from rate parameter p={}",
                self.op.p, self.p
            )));
        }
        if self.m_grid.len() < 4 {
            return Err(Error::InvalidConfig(format!(
                "m_grid needs at least 4 entries for slope fitting, got {}",
                self.m_grid.len()
            )));
        }
        if self.m_grid.windows(2).any(|w| w[1] <= w[0]) || self.m_grid[0] < 2 {
            return Err(Error::InvalidConfig("m_grid must be strictly increasing and start at >= 2".into()));
        }
        if self.trials_per_m == 0 {
            return Err(Error::InvalidConfig("trials_per_m must be positive".into()));
        }
        Ok(())
    }

    /// Fixed-`(m, λ)` setup for the concentration study.
    pub fn concentration_setup(&self) -> Result<ConcentrationSetup<T>> {
        self.validate()?;
        Ok(ConcentrationSetup {
            spec: self.testbed.clone(),
            op: self.op.clone(),
            noise: self.noise,
            truth: make_truth(&self.testbed, self.q, self.root_seed)?,
            m: self.diagnostics.m,
            lambda: self.diagnostics.lambda,
            seed: self.root_seed,
        })
    }
}

/// `f_j = s_j j^-(aq + 0.51)` with seeded random signs: `‖f‖_{H_q}` is
/// finite, `‖f‖_{H_{q'}}` diverges as `n → ∞` for `q' > q + 0.01/a`.
pub fn make_truth<T: Real>(spec: &TestbedSpec<T>, q: T, seed: u64) -> Result<CoefVector<T>> {
    spec.validate()?;
    if !(q >= T::one()) {
        return Err(Error::InvalidConfig(format!("truth smoothness q must be >= 1, got {q}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = spec.a * q + T::lit(0.5 + TRUTH_MARGIN);
    Ok(CoefVector::primal(
        (1..=spec.n)
            .map(|j| {
                let sign = if rng.random::<bool>() { T::one() } else { -T::one() };
                sign * T::from_usize_lossy(j).powf(-decay)
            })
            .collect(),
    ))
}

/// Outcome of one solve at one sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome<T> {
    /// `‖f_{z,λ} − f_ρ‖_H`
    pub error: T,
    pub lambda: T,
    pub converged: bool,
    pub iterations: usize,
}

/// A validated configuration with its operator, truth and penalty.
#[derive(Clone, Debug)]
pub struct Experiment<T> {
    pub config: ExperimentConfig<T>,
    pub op: ForwardOp<T>,
    pub truth: CoefVector<T>,
    pub penalty: Penalty<T>,
    pub prior: CoefVector<T>,
}

impl<T: Real> Experiment<T> {
    pub fn new(config: ExperimentConfig<T>) -> Result<Self> {
        let penalty = Penalty::hilbert(&config.testbed);
        Self::with_penalty(config, penalty)
    }

    /// Same experiment with a different penalty, e.g. `Penalty::identity`.
    pub fn with_penalty(config: ExperimentConfig<T>, penalty: Penalty<T>) -> Result<Self> {
        config.validate()?;
        let op = ForwardOp::new(&config.testbed, &config.op)?;
        let truth = make_truth(&config.testbed, config.q, config.root_seed)?;
        let prior = CoefVector::zeros(Space::Primal, config.testbed.n);
        Ok(Self {
            config,
            op,
            truth,
            penalty,
            prior,
        })
    }

    pub fn lambda(&self, m: usize) -> Result<T> {
        lambda_apriori(self.config.rule, &self.config.rule_params(), m, self.op.mu())
    }

    /// Synthetic sample for trial `trial` at size `m`.
    pub fn sample(&self, m: usize, trial: usize) -> Result<(Sample<T>, ChaCha8Rng)> {
        let mut rng = trial_rng(self.config.root_seed, m, trial);
        let dp = DesignPoints::uniform(m, self.config.testbed.n, &mut rng)?;
        let sample = Sample::synthesize(&self.op, dp, &self.truth, &self.config.noise, &mut rng)?;
        Ok((sample, rng))
    }

    pub fn run_trial(&self, m: usize, trial: usize) -> Result<TrialOutcome<T>> {
        let lambda = self.lambda(m)?;
        let (sample, mut rng) = self.sample(m, trial)?;
        self.solve_sample(&sample, lambda, rng.random())
    }

    pub fn solve_sample(&self, sample: &Sample<T>, lambda: T, restart_seed: u64) -> Result<TrialOutcome<T>> {
        let opts = SolveOptions {
            seed: restart_seed,
            ..self.config.solver
        };
        let res = tikhonov_solve(&self.op, sample, &self.prior, lambda, &self.penalty, &opts)?;
        Ok(TrialOutcome {
            error: res.f_hat.sub(&self.truth).norm(),
            lambda,
            converged: res.converged,
            iterations: res.iterations,
        })
    }
}

/// Error statistics at one sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow<T> {
    pub m: usize,
    pub lambda: T,
    pub err_median: T,
    pub err_q1: T,
    pub err_q3: T,
    pub n_converged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport<T> {
    pub rule: LambdaRule,
    pub rows: Vec<RateRow<T>>,
    pub trials_per_m: usize,
    /// Decay exponent fitted to the medians (positive when errors shrink).
    pub fitted_slope: T,
    pub slope_se: T,
    pub intercept: T,
    pub theoretical: T,
    pub pass: bool,
    /// At least 80% of trials converged at every `m`.
    pub reliable: bool,
    /// The parameter condition held at every `m`.
    pub condition_31: bool,
}

impl<T: Real> RateReport<T> {
    /// Abscissa of the slope fit: `log m`, or `log(m / log m)` for the
    /// logarithmic rule.
    pub fn abscissa(&self, m: usize) -> T {
        rate_abscissa(self.rule, m)
    }
}

fn rate_abscissa<T: Real>(rule: LambdaRule, m: usize) -> T {
    let mm = T::from_usize_lossy(m);
    match rule {
        LambdaRule::Log => (mm / mm.ln()).ln(),
        _ => mm.ln(),
    }
}

/// Predicted decay exponent of the `H` error for `rule`. The general rule
/// behaves like the polynomial one under polynomial eigenvalue decay.
pub fn theoretical_exponent<T: Real>(params: &RuleParams<T>, rule: LambdaRule) -> T {
    let rule = match rule {
        LambdaRule::ThetaGeneral => LambdaRule::Poly,
        r => r,
    };
    params.error_exponent(rule).expect("closed-form rule")
}

/// `|fitted − theoretical| ≤ 0.4 · theoretical + 0.05`
pub fn within_band<T: Real>(fitted: T, theoretical: T) -> bool {
    (fitted - theoretical).abs() <= T::lit(0.4) * theoretical + T::lit(0.05)
}

pub fn run_rate_study<T: Real>(config: &ExperimentConfig<T>) -> Result<RateReport<T>> {
    Experiment::new(config.clone())?.rate_study()
}

impl<T: Real> Experiment<T> {
    pub fn rate_study(&self) -> Result<RateReport<T>> {
        let cfg = &self.config;
        let lambdas = cfg
            .m_grid
            .iter()
            .map(|&m| self.lambda(m))
            .collect::<Result<Vec<T>>>()?;
        let jobs: Vec<(usize, usize, T)> = cfg
            .m_grid
            .iter()
            .zip(&lambdas)
            .flat_map(|(&m, &l)| (0..cfg.trials_per_m).map(move |t| (m, t, l)))
            .collect();
        let outcomes = jobs
            .par_iter()
            .map(|&(m, t, lambda)| {
                let (sample, mut rng) = self.sample(m, t)?;
                self.solve_sample(&sample, lambda, rng.random())
            })
            .collect::<Result<Vec<_>>>()?;

        let mut rows = Vec::with_capacity(cfg.m_grid.len());
        let mut condition_ok = true;
        for ((&m, &lambda), chunk) in cfg.m_grid.iter().zip(&lambdas).zip(outcomes.chunks(cfg.trials_per_m)) {
            let errs: Vec<T> = chunk.iter().map(|o| o.error).collect();
            rows.push(RateRow {
                m,
                lambda,
                err_median: median(&errs),
                err_q1: quantile(&errs, T::lit(0.25)),
                err_q3: quantile(&errs, T::lit(0.75)),
                n_converged: chunk.iter().filter(|o| o.converged).count(),
            });
            condition_ok &= check_condition_31(lambda, m, self.op.mu())?.holds;
        }
        let theoretical = theoretical_exponent(&cfg.rule_params(), cfg.rule);
        summarize(cfg.rule, rows, cfg.trials_per_m, theoretical, condition_ok)
    }
}

/// Fit the slope of a finished table and evaluate the pass band.
pub fn summarize<T: Real>(
    rule: LambdaRule,
    rows: Vec<RateRow<T>>,
    trials_per_m: usize,
    theoretical: T,
    condition_31: bool,
) -> Result<RateReport<T>> {
    if rows.is_empty() {
        return Err(Error::EmptyReport("rate table has no rows".into()));
    }
    let xs: Vec<T> = rows.iter().map(|r| rate_abscissa(rule, r.m)).collect();
    let ys: Vec<T> = rows.iter().map(|r| r.err_median.ln()).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::DegenerateGrid("need two distinct sample sizes".into()))?;
    let fitted_slope = -fit.slope;
    let need = (MIN_CONVERGED_FRACTION * trials_per_m as f64).ceil() as usize;
    let reliable = rows.iter().all(|r| r.n_converged >= need);
    Ok(RateReport {
        rule,
        rows,
        trials_per_m,
        fitted_slope,
        slope_se: fit.slope_se,
        intercept: fit.intercept,
        theoretical,
        pass: fitted_slope.is_finite() && within_band(fitted_slope, theoretical),
        reliable,
        condition_31,
    })
}

/// Rate studies with the Hilbert-scale penalty and with the identity
/// penalty on identical data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport<T> {
    pub hilbert: RateReport<T>,
    pub standard: RateReport<T>,
    /// `hilbert slope ≥ standard slope − 0.02`
    pub holds: bool,
}

pub const SATURATION_TOLERANCE: f64 = 0.02;

pub fn saturation_contrast<T: Real>(config: &ExperimentConfig<T>) -> Result<SaturationReport<T>> {
    if !(config.q > T::lit(2.0) && config.q <= T::lit(2.0) + config.p) {
        return Err(Error::InvalidConfig(format!(
            "saturation contrast needs 2 < q <= 2 + p, got q={} p={}",
            config.q, config.p
        )));
    }
    let hilbert = Experiment::new(config.clone())?.rate_study()?;
    let standard = Experiment::with_penalty(config.clone(), Penalty::identity(config.testbed.n))?.rate_study()?;
    let holds = hilbert.fitted_slope >= standard.fitted_slope - T::lit(SATURATION_TOLERANCE);
    Ok(SaturationReport {
        hilbert,
        standard,
        holds,
    })
}
