//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test --release --test acceptance`, or pass
//! criterion numbers to run a subset: `cargo test --test acceptance -- 1 6`.
//! Failures are reported but only fail the process when `ACCEPTANCE_STRICT`
//! is set, so a workspace test run still reaches the remaining targets.

use std::time::{Duration, Instant};

use hilbert_tikhonov::estimator::{lambda_apriori, theta_lambda, LambdaRule, Penalty, RuleParams, Sample, SolveOptions};
use hilbert_tikhonov::forward::{unit_direction, OpConfig, OpKind};
use hilbert_tikhonov::harness::{make_truth, run_rate_study, saturation_contrast, ExperimentConfig, RateReport};
use hilbert_tikhonov::noise::{NoiseKind, NoiseModel};
use hilbert_tikhonov::report::emit_report;
use hilbert_tikhonov::rkhs::{effective_dimension, DesignPoints, KernelView};
use hilbert_tikhonov::stats::linear_fit;
use hilbert_tikhonov::testbed::{CoefVector, Space};
use hilbert_tikhonov::{diagnostics, estimator, ForwardOp, Testbed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn default_op(c: f64) -> OpConfig<f64> {
    OpConfig {
        kind: OpKind::Hammerstein,
        p: 1.0,
        c,
        grid_size: None,
    }
}

fn criterion_1() -> Outcome {
    let spec = Testbed::polynomial(200, 1.0, 0.5).unwrap();
    let kernel = KernelView::new(&spec);
    let mu = kernel.mu();
    let kappa_sq = kernel.kappa_sq().grid_sup;
    let lambdas: Vec<f64> = (4..=20).map(|k| 10f64.powf(-(k as f64) / 4.0)).collect();
    let ns: Vec<f64> = lambdas.iter().map(|&l| effective_dimension(mu, l).unwrap()).collect();
    // λ decreases along the grid, so N must strictly increase
    let monotone = ns.windows(2).all(|w| w[1] > w[0]);
    let min_slack = lambdas
        .iter()
        .zip(&ns)
        .map(|(&l, &n)| kappa_sq / l - n)
        .fold(f64::INFINITY, f64::min);
    let lower = lambdas.iter().zip(&ns).filter(|(&l, _)| l <= mu[0]).all(|(_, &n)| n >= 0.5);
    let oracle_err = lambdas
        .iter()
        .zip(&ns)
        .map(|(&l, &n)| {
            let direct: f64 = (1..=200).map(|j| {
                let m = 1.0 / (j as f64).powi(2);
                m / (m + l)
            }).sum();
            (direct - n).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        monotone && min_slack > 0.0 && lower && oracle_err <= 1e-12,
        format!("monotone={monotone} min(κ²/λ−N)={min_slack:.3e} N≥1/2={lower} oracle err={oracle_err:.1e}"),
    )
}

fn criterion_2() -> Outcome {
    let spec = Testbed::polynomial(64, 1.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let f = CoefVector::primal(
            (1..=64)
                .map(|j| rng.sample::<f64, _>(StandardNormal) / j as f64)
                .collect(),
        );
        let mut pts: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        pts.sort_by(f64::total_cmp);
        if pts[0] == pts[1] || pts[1] == pts[2] {
            continue;
        }
        worst = worst.min(spec.interpolation_gap(&f, pts[0], pts[1], pts[2]).unwrap());
    }
    let mut eq_err: f64 = 0.0;
    for j in [1usize, 2, 17, 64] {
        let e = CoefVector::unit(Space::Primal, 64, j).scale(1.7);
        eq_err = eq_err.max(spec.interpolation_gap(&e, -1.0, 0.3, 1.2).unwrap().abs());
    }
    outcome(
        worst >= -1e-12 && eq_err <= 1e-12,
        format!("min gap={worst:.3e} single-component |gap|≤{eq_err:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let spec = Testbed::default();
    let op = ForwardOp::new(&spec, &default_op(0.0)).unwrap();
    let f_rho = make_truth(&spec, 2.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = CoefVector::primal((0..spec.n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
        worst = worst.max((op.link_ratio(&f_rho, &g).unwrap() - 1.0).abs());
    }
    outcome(worst <= 1e-10, format!("max |ratio − 1| = {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let spec = Testbed::default();
    let op = ForwardOp::new(&spec, &default_op(0.1)).unwrap();
    let f_rho = make_truth(&spec, 2.0, 4).unwrap();
    let trials = 200;
    let consts = op
        .estimate_constants(&f_rho, trials, 0.1, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    // the same directions estimate_constants sampled
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dirs: Vec<CoefVector<f64>> = (0..trials).map(|_| unit_direction(spec.n, &mut rng)).collect();
    let mut bounds_ok = true;
    let mut worst_l2: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    let (mut xs, mut ys) = (vec![], vec![]);
    for radius in [1e-1, 1e-2, 1e-3] {
        for d in &dirs {
            let f = f_rho.axpy(radius, d);
            let delta = f.sub(&f_rho);
            let (r_h, r_l2) = op.linearization_residual(&f, &f_rho).unwrap();
            let h = delta.norm();
            let h_neg = spec.hs_norm(&delta, -1.0).unwrap();
            let b_l2 = consts.gamma_hat / 2.0 * h * h_neg;
            let b_h = 2.0 * consts.j_hat * h;
            bounds_ok &= r_l2 <= b_l2 && r_h <= b_h;
            worst_l2 = worst_l2.max(r_l2 / b_l2);
            worst_h = worst_h.max(r_h / b_h);
            xs.push(radius.ln());
            ys.push(r_l2.ln());
        }
    }
    let slope = linear_fit(&xs, &ys).unwrap().slope;
    outcome(
        bounds_ok && (slope - 2.0).abs() <= 0.05,
        format!(
            "γ̂={:.4} Ĵ={:.4} max r_L2/bound={worst_l2:.4} max r_H′/bound={worst_h:.2e} slope={slope:.4}",
            consts.gamma_hat, consts.j_hat
        ),
    )
}

fn criterion_5() -> Outcome {
    let n = 32;
    let m = 200;
    let spec = Testbed::polynomial(n, 1.0, 0.5).unwrap();
    let penalty = Penalty::hilbert(&spec);
    let noise = NoiseModel::default();
    let zero = CoefVector::zeros(Space::Primal, n);
    let lin = ForwardOp::new(&spec, &default_op(0.0)).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let truth = make_truth(&spec, 2.0, seed).unwrap();
        let dp = DesignPoints::uniform(m, n, &mut rng).unwrap();
        let sample = Sample::synthesize(&lin, dp, &truth, &noise, &mut rng).unwrap();
        let lambda = 10f64.powf(rng.random_range(-4.0..-1.0));
        let res = estimator::tikhonov_solve(&lin, &sample, &zero, lambda, &penalty, &SolveOptions::default()).unwrap();
        let oracle = closed_form(&lin, &sample, lambda, &penalty);
        worst = worst.max(res.f_hat.sub(&oracle).norm() / oracle.norm());
    }
    let op = ForwardOp::new(&spec, &default_op(0.1)).unwrap();
    let mut good = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let truth = make_truth(&spec, 2.0, seed).unwrap();
        let dp = DesignPoints::uniform(m, n, &mut rng).unwrap();
        let sample = Sample::synthesize(&op, dp, &truth, &noise, &mut rng).unwrap();
        let lambda = (m as f64).powf(-0.5);
        let opts = SolveOptions { seed, ..SolveOptions::default() };
        let res = estimator::tikhonov_solve(&op, &sample, &zero, lambda, &penalty, &opts).unwrap();
        if res.converged && res.iterations <= 20 {
            good += 1;
        }
    }
    outcome(
        worst <= 1e-8 && good >= 95,
        format!("c=0 max rel err={worst:.2e}; c=0.1 converged within 20 its: {good}/100"),
    )
}

/// `argmin ‖Φ W f − y‖²/m + λ Σ Λ_j f_j²` by a dense LU solve.
fn closed_form(op: &ForwardOp, s: &Sample<f64>, lambda: f64, pen: &Penalty<f64>) -> CoefVector<f64> {
    let n = op.n();
    let m = s.m() as f64;
    let phi = s.dp.features();
    let a = nalgebra::DMatrix::from_fn(s.m(), n, |i, j| phi[(i, j)] * op.l2_weights()[j]);
    let y = nalgebra::DVector::from_column_slice(&s.y);
    let mut lhs = a.transpose() * &a / m;
    for j in 0..n {
        lhs[(j, j)] += lambda * pen.weights()[j];
    }
    let rhs = a.transpose() * y / m;
    CoefVector::primal(lhs.lu().solve(&rhs).unwrap().as_slice().to_vec())
}

fn criterion_6() -> Outcome {
    let mu = KernelView::new(&Testbed::default()).mu().to_vec();
    let params = RuleParams { p: 1.0, q: 2.0, b: 0.5 };
    let l = lambda_apriori(LambdaRule::Trivial, &params, 10_000, &mu).unwrap();
    let direct_err = (l - 10f64.powf(-1.6)).abs();
    let kappa_sq = KernelView::new(&Testbed::default()).kappa_sq().grid_sup;
    let (mut xs, mut ys) = (vec![], vec![]);
    for e in 2..=6 {
        let m = 10usize.pow(e);
        let l = theta_lambda(&params, m, mu[0], |l| Ok(kappa_sq / l)).unwrap();
        xs.push((m as f64).ln());
        ys.push(l.ln());
    }
    let slope = linear_fit(&xs, &ys).unwrap().slope;
    outcome(
        direct_err <= 1e-12 && (slope + 0.4).abs() <= 1e-6,
        format!("λ(10⁴)={l:.6} (m-exponent −0.4, err {direct_err:.1e}); Θ-rule slope={slope:.9}"),
    )
}

fn rate_config(rule: LambdaRule, q: f64, seed: u64) -> ExperimentConfig<f64> {
    ExperimentConfig {
        testbed: Testbed::default(),
        op: default_op(0.1),
        noise: NoiseModel::certified(NoiseKind::Gaussian, 0.1).unwrap(),
        p: 1.0,
        q,
        b: 0.5,
        rule,
        root_seed: seed,
        ..ExperimentConfig::default()
    }
}

fn describe(r: &RateReport<f64>) -> String {
    let medians: Vec<String> = r.rows.iter().map(|row| format!("{:.4}", row.err_median)).collect();
    format!(
        "slope={:.4}±{:.4} (theory {:.4}) reliable={} N≤mλ={} medians=[{}]",
        r.fitted_slope,
        r.slope_se,
        r.theoretical,
        r.reliable,
        r.condition_31,
        medians.join(", ")
    )
}

fn criterion_7() -> Outcome {
    let r = run_rate_study(&rate_config(LambdaRule::Poly, 2.0, 7)).unwrap();
    outcome(
        (0.15..=0.35).contains(&r.fitted_slope) && r.condition_31,
        describe(&r),
    )
}

fn criterion_8() -> Outcome {
    let r = run_rate_study(&rate_config(LambdaRule::Trivial, 2.0, 8)).unwrap();
    outcome((0.10..=0.30).contains(&r.fitted_slope), describe(&r))
}

fn criterion_9() -> Outcome {
    let cfg = rate_config(LambdaRule::Poly, 2.0, 9);
    let setup = cfg.concentration_setup().unwrap();
    let rep = diagnostics::concentration_study(&setup, 500, 0.1).unwrap();
    let theta = rep.check("theta_z").unwrap();
    let hs = rep.check("hs_x").unwrap();
    outcome(
        theta.pass && hs.pass,
        format!(
            "Θ_z q90={:.4} ≤ {:.4}; HS q90={:.4} ≤ {:.4} (κ²={:.4}, N={:.3})",
            theta.quantile, theta.bound, hs.quantile, hs.bound, rep.kappa_sq, rep.n_eff
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut all = true;
    let mut parts = vec![];
    for seed in 0..5u64 {
        let rep = saturation_contrast(&rate_config(LambdaRule::Trivial, 3.0, 1000 + seed)).unwrap();
        all &= rep.holds;
        parts.push(format!(
            "seed {seed}: hilbert {:.4} vs identity {:.4}",
            rep.hilbert.fitted_slope, rep.standard.fitted_slope
        ));
    }
    outcome(all, parts.join("; "))
}

fn criterion_11() -> Outcome {
    let cfg = rate_config(LambdaRule::Poly, 2.0, 7);
    let dir = tempfile::tempdir().unwrap();
    let a = emit_report(&run_rate_study(&cfg).unwrap(), &dir.path().join("a")).unwrap();
    let b = emit_report(&run_rate_study(&cfg).unwrap(), &dir.path().join("b")).unwrap();
    let (ca, cb) = (std::fs::read(a.csv).unwrap(), std::fs::read(b.csv).unwrap());
    let identical = ca == cb;
    outcome(identical, format!("rates.csv identical={identical} ({} bytes)", ca.len()))
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "effective-dimension laws", Duration::from_secs(1), criterion_1),
        (2, "interpolation inequality", Duration::from_secs(1), criterion_2),
        (3, "link condition exactness", Duration::from_secs(5), criterion_3),
        (4, "linearization bounds", Duration::from_secs(30), criterion_4),
        (5, "solver oracle", Duration::from_secs(60), criterion_5),
        (6, "parameter rules", Duration::from_secs(1), criterion_6),
        (7, "rate reproduction, poly rule", Duration::from_secs(600), criterion_7),
        (8, "rate reproduction, trivial rule", Duration::from_secs(600), criterion_8),
        (9, "concentration quantiles", Duration::from_secs(300), criterion_9),
        (10, "saturation contrast", Duration::from_secs(900), criterion_10),
        (11, "determinism", Duration::from_secs(1200), criterion_11),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let timing = if elapsed > budget {
            format!("{:.1}s, over the {}s budget", elapsed.as_secs_f64(), budget.as_secs())
        } else {
            format!("{:.1}s", elapsed.as_secs_f64())
        };
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id:>2} ({name}): {} [{timing}]", out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    } else {
        println!("all selected acceptance criteria passed");
    }
}
