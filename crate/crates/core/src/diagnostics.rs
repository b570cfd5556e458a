//! Standardized noise and covariance quantities and the concentration
//! bounds they are expected to obey.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{check_condition_31, predict, Condition31, Sample};
use crate::forward::{ForwardOp, OpConfig};
use crate::linalg::{Mat, SymEigen};
use crate::noise::NoiseModel;
use crate::rkhs::{effective_dimension, DesignPoints, KernelView};
use crate::rng::trial_rng;
use crate::scalar::Real;
use crate::stats::quantile;
use crate::testbed::{CoefVector, TestbedSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizedQuantities<T> {
    /// `‖(T_ν+λ)^{-1/2} S_x*(S_x A(f_ρ) − y)‖`
    pub theta_z: T,
    /// `‖(T_ν+λ)^{-1/2}(T_ν − T_x)‖`
    pub psi_x: T,
    /// `‖(T_x+λ)^{-1/2}(T_ν+λ)^{1/2}‖`
    pub gamma_x: T,
    /// Hilbert-Schmidt norm of `(T_ν+λ)^{-1/2}(T_x − T_ν)`.
    pub hs_x: T,
    pub lambda: T,
}

pub fn compute_standardized<T: Real>(
    op: &ForwardOp<T>,
    sample: &Sample<T>,
    f_rho: &CoefVector<T>,
    lambda: T,
) -> Result<StandardizedQuantities<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::NonPositiveLambda(lambda.as_f64()));
    }
    let kernel = KernelView::from_mu(op.mu().to_vec());
    let n = kernel.n();
    let delta: Vec<T> = predict(op, &sample.dp, f_rho)?
        .iter()
        .zip(&sample.y)
        .map(|(&p, &y)| p - y)
        .collect();
    let adj = kernel.sampling_adjoint(&sample.dp, &delta)?;
    let inv_root: Vec<T> = kernel.mu().iter().map(|&m| T::one() / (m + lambda).sqrt()).collect();
    let theta_z = adj
        .coeffs
        .iter()
        .zip(&inv_root)
        .map(|(&v, &d)| (v * d) * (v * d))
        .sum::<T>()
        .sqrt();

    let t_x = kernel.covariance_empirical(&sample.dp)?;
    if !t_x.is_finite() {
        return Err(Error::Eigen("empirical covariance has non-finite entries".into()));
    }
    // P = D (T_ν − T_x) with D = (T_ν + λ)^{-1/2}
    let p = Mat::from_fn(n, n, |i, j| {
        let pop = if i == j { kernel.mu()[i] } else { T::zero() };
        inv_root[i] * (pop - t_x[(i, j)])
    });
    let hs_x = p.frobenius_norm();
    let ppt = p.matmul(&p.transpose());
    let psi_x = SymEigen::new(&ppt)?.max_value().max(T::zero()).sqrt();

    // ‖(T_x+λ)^{-1/2} S‖² = 1 / λ_min(S⁻¹ (T_x+λ) S⁻¹) with S = (T_ν+λ)^{1/2}
    let mut shifted = t_x.scale_rows_cols(&inv_root, &inv_root);
    for (i, &d) in inv_root.iter().enumerate() {
        shifted[(i, i)] += lambda * d * d;
    }
    let lo = SymEigen::new(&shifted)?.min_value().max(T::zero());
    let gamma_x = (T::one() / lo).sqrt();
    Ok(StandardizedQuantities {
        theta_z,
        psi_x,
        gamma_x,
        hs_x,
        lambda,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1Bounds<T> {
    pub theta: T,
    pub psi_hs: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2Bounds<T> {
    pub psi: T,
    pub gamma_power: T,
}

fn check_eta<T: Real>(eta: T) -> Result<()> {
    if !(eta > T::zero() && eta < T::one()) {
        return Err(Error::InvalidConfig(format!("confidence eta must lie in (0, 1), got {eta}")));
    }
    Ok(())
}

fn check_positive<T: Real>(name: &str, v: T) -> Result<()> {
    if !(v > T::zero()) {
        return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// `2(κM/(m√λ) + √(Σ²N/m)) log(2/η)` and `2(κ²/(m√λ) + √(κ²N/m)) log(2/η)`.
pub fn proposition_a1_bounds<T: Real>(
    m: usize,
    lambda: T,
    eta: T,
    bernstein_m: T,
    bernstein_sigma: T,
    kappa: T,
    n_eff: T,
) -> Result<A1Bounds<T>> {
    check_eta(eta)?;
    for (name, v) in [
        ("lambda", lambda),
        ("M", bernstein_m),
        ("Sigma", bernstein_sigma),
        ("kappa", kappa),
        ("N(lambda)", n_eff),
    ] {
        check_positive(name, v)?;
    }
    if m == 0 {
        return Err(Error::InvalidConfig("sample size must be positive".into()));
    }
    let mm = T::from_usize_lossy(m);
    let two = T::lit(2.0);
    let log_term = (two / eta).ln();
    let theta = two
        * (kappa * bernstein_m / (mm * lambda.sqrt()) + (bernstein_sigma * bernstein_sigma * n_eff / mm).sqrt())
        * log_term;
    let psi_hs = two * (kappa * kappa / (mm * lambda.sqrt()) + (kappa * kappa * n_eff / mm).sqrt()) * log_term;
    Ok(A1Bounds { theta, psi_hs })
}

/// `√λ 2κ(2κ+1) log(2/η)` and `((2κ+1)² log(2/η))^{2s}`.
pub fn proposition_a2_bounds<T: Real>(lambda: T, eta: T, kappa: T, s: T) -> Result<A2Bounds<T>> {
    check_eta(eta)?;
    check_positive("lambda", lambda)?;
    check_positive("kappa", kappa)?;
    if !(s >= T::zero() && s <= T::one()) {
        return Err(Error::InvalidConfig(format!("power s must lie in [0, 1], got {s}")));
    }
    let two = T::lit(2.0);
    let log_term = (two / eta).ln();
    let k2 = two * kappa + T::one();
    Ok(A2Bounds {
        psi: lambda.sqrt() * two * kappa * k2 * log_term,
        gamma_power: (k2 * k2 * log_term).powf(two * s),
    })
}

/// Everything needed to draw i.i.d. samples at a fixed `(m, λ)`.
#[derive(Clone, Debug)]
pub struct ConcentrationSetup<T> {
    pub spec: TestbedSpec<T>,
    pub op: OpConfig<T>,
    pub noise: NoiseModel<T>,
    pub truth: CoefVector<T>,
    pub m: usize,
    pub lambda: T,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileCheck<T> {
    pub name: String,
    pub quantile: T,
    pub bound: T,
    pub pass: bool,
    /// `bound − quantile`
    pub slack: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport<T> {
    pub trials: Vec<StandardizedQuantities<T>>,
    pub eta: T,
    pub kappa_sq: T,
    pub n_eff: T,
    pub a1: A1Bounds<T>,
    /// Evaluated at `s = 1/2`, the power matching `Γ_x`.
    pub a2: A2Bounds<T>,
    pub checks: Vec<QuantileCheck<T>>,
    pub condition_31: Condition31<T>,
}

impl<T: Real> ConcentrationReport<T> {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&QuantileCheck<T>> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Draw `trials` independent samples and compare the empirical
/// `(1−η)`-quantile of each standardized quantity with its bound.
pub fn concentration_study<T: Real>(
    setup: &ConcentrationSetup<T>,
    trials: usize,
    eta: T,
) -> Result<ConcentrationReport<T>> {
    check_eta(eta)?;
    if trials == 0 {
        return Err(Error::InvalidConfig("concentration study needs trials >= 1".into()));
    }
    let op = ForwardOp::new(&setup.spec, &setup.op)?;
    let kernel = KernelView::new(&setup.spec);
    let rows = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(setup.seed, setup.m, t);
            let dp = DesignPoints::uniform(setup.m, setup.spec.n, &mut rng)?;
            let sample = Sample::synthesize(&op, dp, &setup.truth, &setup.noise, &mut rng)?;
            compute_standardized(&op, &sample, &setup.truth, setup.lambda)
        })
        .collect::<Result<Vec<_>>>()?;

    let kappa_sq = kernel.kappa_sq().grid_sup;
    let kappa = kappa_sq.sqrt();
    let n_eff = effective_dimension(kernel.mu(), setup.lambda)?;
    let a1 = proposition_a1_bounds(
        setup.m,
        setup.lambda,
        eta,
        setup.noise.bernstein_m,
        setup.noise.bernstein_sigma,
        kappa,
        n_eff,
    )?;
    let a2 = proposition_a2_bounds(setup.lambda, eta, kappa, T::lit(0.5))?;
    let level = T::one() - eta;
    let pick = |f: fn(&StandardizedQuantities<T>) -> T| -> T {
        let vals: Vec<T> = rows.iter().map(f).collect();
        quantile(&vals, level)
    };
    let make = |name: &str, q: T, bound: T| QuantileCheck {
        name: name.to_string(),
        quantile: q,
        bound,
        pass: q <= bound,
        slack: bound - q,
    };
    let checks = vec![
        make("theta_z", pick(|r| r.theta_z), a1.theta),
        make("hs_x", pick(|r| r.hs_x), a1.psi_hs),
        make("psi_x", pick(|r| r.psi_x), a2.psi),
        make("gamma_x", pick(|r| r.gamma_x), a2.gamma_power),
    ];
    Ok(ConcentrationReport {
        trials: rows,
        eta,
        kappa_sq,
        n_eff,
        a1,
        a2,
        checks,
        condition_31: check_condition_31(setup.lambda, setup.m, kernel.mu())?,
    })
}
