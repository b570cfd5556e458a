use hilbert_tikhonov::estimator::{
    check_condition_31, lambda_apriori, objective, tikhonov_solve, LambdaRule, Penalty, RuleParams, Sample, SolveOptions,
};
use hilbert_tikhonov::forward::{inner, multiplication_matrix, OpConfig, OpKind};
use hilbert_tikhonov::noise::{certify_bernstein, NoiseKind, NoiseModel};
use hilbert_tikhonov::rkhs::{effective_dimension, DesignPoints};
use hilbert_tikhonov::stats::linear_fit;
use hilbert_tikhonov::testbed::{CoefVector, Space};
use hilbert_tikhonov::{Coefs, ForwardOp, Kernel, Testbed};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn coefs(n: usize, scale: f64) -> impl Strategy<Value = Coefs> {
    proptest::collection::vec(-scale..scale, n).prop_map(CoefVector::primal)
}

fn hammerstein(n: usize, c: f64) -> ForwardOp {
    let spec = Testbed::polynomial(n, 1.0, 0.5).unwrap();
    let cfg = OpConfig {
        kind: OpKind::Hammerstein,
        p: 1.0,
        c,
        grid_size: None,
    };
    ForwardOp::new(&spec, &cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn effective_dimension_is_bounded_and_monotone(b in 0.2f64..0.9, l1 in -6.0f64..0.0, dl in 0.01f64..2.0) {
        let spec = Testbed::polynomial(50, 1.0, b).unwrap();
        let kernel = Kernel::new(&spec);
        let (small, large) = (10f64.powf(l1), 10f64.powf(l1 + dl));
        let n_small = effective_dimension(kernel.mu(), small).unwrap();
        let n_large = effective_dimension(kernel.mu(), large).unwrap();
        prop_assert!(n_large < n_small);
        prop_assert!(n_small > 0.0 && n_small <= 50.0);
        let trace: f64 = kernel.mu().iter().sum();
        prop_assert!(n_small <= trace / small * (1.0 + 1e-12));
    }

    #[test]
    fn interpolation_gap_nonnegative(f in coefs(32, 1.0), t in -1.5f64..1.5, d1 in 0.05f64..1.0, d2 in 0.05f64..1.0) {
        let spec = Testbed::polynomial(32, 1.0, 0.5).unwrap();
        let gap = spec.interpolation_gap(&f, t, t + d1, t + d1 + d2).unwrap();
        prop_assert!(gap >= -1e-12, "gap {gap}");
    }

    #[test]
    fn galerkin_matrix_matches_pseudo_spectral_product(f in coefs(15, 1.0), h in coefs(15, 1.0)) {
        let op = hammerstein(15, 0.1);
        let m = multiplication_matrix(&f.coeffs);
        let direct = op.pointwise_product(&f.coeffs, &h.coeffs);
        for (j, want) in direct.iter().enumerate() {
            let got: f64 = (0..15).map(|k| m[(j, k)] * h.coeffs[k]).sum();
            prop_assert!((got - want).abs() < 1e-12);
        }
        let swapped = op.pointwise_product(&h.coeffs, &f.coeffs);
        for (a, b) in direct.iter().zip(&swapped) {
            prop_assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_adjoint_identity(f in coefs(20, 1.0), h in coefs(20, 1.0), g in proptest::collection::vec(-1.0f64..1.0, 20)) {
        let op = hammerstein(20, 0.2);
        let g = CoefVector::image(g);
        let lhs = inner(&op.frechet_apply(&f, &h).unwrap(), &g);
        let rhs = inner(&h, &op.frechet_adjoint(&f, &g).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn linear_estimate_minimizes_objective(seed in 0u64..1000, dir in coefs(12, 1.0), step in 1e-3f64..1e-1, log_lambda in -4.0f64..-1.0) {
        let op = hammerstein(12, 0.0);
        let spec = Testbed::polynomial(12, 1.0, 0.5).unwrap();
        let penalty = Penalty::hilbert(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dp = DesignPoints::uniform(60, 12, &mut rng).unwrap();
        let truth = CoefVector::primal((1..=12).map(|j| 1.0 / (j * j) as f64).collect());
        let sample = Sample::synthesize(&op, dp, &truth, &NoiseModel::default(), &mut rng).unwrap();
        let zero = CoefVector::zeros(Space::Primal, 12);
        let lambda = 10f64.powf(log_lambda);
        let res = tikhonov_solve(&op, &sample, &zero, lambda, &penalty, &SolveOptions::default()).unwrap();
        let at_min = objective(&op, &sample, &res.f_hat, &zero, lambda, &penalty).unwrap();
        let moved = objective(&op, &sample, &res.f_hat.axpy(step, &dir), &zero, lambda, &penalty).unwrap();
        prop_assert!(moved >= at_min * (1.0 - 1e-12));
    }

    #[test]
    fn solve_is_permutation_invariant(seed in 0u64..1000, shift in 1usize..39) {
        let op = hammerstein(10, 0.1);
        let spec = Testbed::polynomial(10, 1.0, 0.5).unwrap();
        let penalty = Penalty::hilbert(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dp = DesignPoints::uniform(40, 10, &mut rng).unwrap();
        let truth = CoefVector::primal((1..=10).map(|j| 0.5 / j as f64).collect());
        let sample = Sample::synthesize(&op, dp.clone(), &truth, &NoiseModel::default(), &mut rng).unwrap();
        let mut x = dp.points().to_vec();
        let mut y = sample.y.clone();
        x.rotate_left(shift);
        y.rotate_left(shift);
        let rotated = Sample::new(DesignPoints::new(x, 10).unwrap(), y).unwrap();
        let zero = CoefVector::zeros(Space::Primal, 10);
        let opts = SolveOptions { seed, ..SolveOptions::default() };
        let a = tikhonov_solve(&op, &sample, &zero, 0.01, &penalty, &opts).unwrap();
        let b = tikhonov_solve(&op, &rotated, &zero, 0.01, &penalty, &opts).unwrap();
        prop_assert!(a.f_hat.sub(&b.f_hat).norm() <= 1e-8 * a.f_hat.norm());
    }

    #[test]
    fn certified_pairs_hold(sigma in 0.01f64..2.0, uniform in any::<bool>()) {
        let kind = if uniform { NoiseKind::BoundedUniform } else { NoiseKind::Gaussian };
        let model = NoiseModel::certified(kind, sigma).unwrap();
        let check = certify_bernstein(&model, model.bernstein_m, model.bernstein_sigma).unwrap();
        prop_assert!(check.holds, "{check:?}");
    }

    #[test]
    fn apriori_lambda_decreases_in_m(q in 1.0f64..3.0, m in 10usize..100_000) {
        let mu = Kernel::new(&Testbed::default()).mu().to_vec();
        let params = RuleParams { p: 1.0, q, b: 0.5 };
        for rule in [LambdaRule::Trivial, LambdaRule::Poly] {
            let a = lambda_apriori(rule, &params, m, &mu).unwrap();
            let b = lambda_apriori(rule, &params, 2 * m, &mu).unwrap();
            prop_assert!(b < a && a > 0.0);
        }
    }

    #[test]
    fn condition_31_slacks_are_consistent(log_lambda in -4.0f64..0.0, m in 2usize..20_000) {
        let mu = Kernel::new(&Testbed::default()).mu().to_vec();
        let lambda = 10f64.powf(log_lambda);
        let c = check_condition_31(lambda, m, &mu).unwrap();
        prop_assert_eq!(c.holds, c.dimension_slack >= 0.0 && c.norm_slack >= 0.0);
        prop_assert!((c.dimension_slack - (m as f64 * lambda - c.n_eff)).abs() < 1e-9 * (1.0 + m as f64 * lambda));
    }

    #[test]
    fn slope_fit_recovers_exact_power(slope in -2.0f64..2.0, c in -3.0f64..3.0) {
        let xs: Vec<f64> = [250.0f64, 500.0, 1000.0, 2000.0, 4000.0].iter().map(|m| m.ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| c + slope * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-10);
    }
}
