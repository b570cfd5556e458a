//! Kernel, sampling operator, covariance operators and effective dimension.
//!
//! The kernel is `K(x, x′) = Σ_j μ_j φ_j(x) φ_j(x′)`, so `H′` has the
//! orthonormal system `{√μ_j φ_j}` and the population covariance `T_ν` is
//! `diag(μ)` in those coordinates. The empirical covariance
//! `T_x = S_x* S_x` is dense and built from the design's feature table.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat};
use crate::scalar::Real;
use crate::stats::{linear_fit, LineFit};
use crate::testbed::{basis_row, check_point, CoefVector, Space, TestbedSpec};

#[derive(Clone, Debug)]
pub struct KernelView<T> {
    n: usize,
    mu: Vec<T>,
    sqrt_mu: Vec<T>,
}

/// `κ² = sup_x K(x, x)`, evaluated on a grid and bounded analytically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaSq<T> {
    pub grid_sup: T,
    /// `μ₁ + 2 Σ_{j≥2} μ_j`, valid since `|φ_j|² ≤ 2`.
    pub certified_bound: T,
}

impl<T: Real> KernelView<T> {
    pub fn new(spec: &TestbedSpec<T>) -> Self {
        Self::from_mu(spec.mu())
    }

    pub fn from_mu(mu: Vec<T>) -> Self {
        let sqrt_mu = mu.iter().map(|m| m.sqrt()).collect();
        Self {
            n: mu.len(),
            mu,
            sqrt_mu,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn sqrt_mu(&self) -> &[T] {
        &self.sqrt_mu
    }

    pub fn kernel_eval(&self, x: T, x2: T) -> Result<T> {
        check_point(x)?;
        check_point(x2)?;
        let mut a = vec![T::zero(); self.n];
        let mut b = vec![T::zero(); self.n];
        basis_row(x, &mut a);
        basis_row(x2, &mut b);
        Ok(self
            .mu
            .iter()
            .zip(a.iter().zip(&b))
            .map(|(&m, (&p, &q))| m * p * q)
            .sum())
    }

    pub fn kappa_sq(&self) -> KappaSq<T> {
        let points = 8 * self.n.max(8);
        let mut row = vec![T::zero(); self.n];
        let mut sup = T::zero();
        for g in 0..=points {
            let x = T::from_usize_lossy(g) / T::from_usize_lossy(points);
            basis_row(x, &mut row);
            let kxx: T = self.mu.iter().zip(&row).map(|(&m, &p)| m * p * p).sum();
            sup = sup.max(kxx);
        }
        let tail: T = self.mu.iter().skip(1).copied().sum();
        KappaSq {
            grid_sup: sup,
            certified_bound: self.mu[0] + T::lit(2.0) * tail,
        }
    }

    /// `S_x g = (g(x_1), …, g(x_m))`.
    pub fn sampling_apply(&self, dp: &DesignPoints<T>, g: &CoefVector<T>) -> Result<Vec<T>> {
        g.require(Space::Image)?;
        self.check_dims(dp, g.len())?;
        let w: Vec<T> = g.coeffs.iter().zip(&self.sqrt_mu).map(|(&c, &s)| c * s).collect();
        Ok(dp.features().matvec(&w))
    }

    /// `S_x* c = (1/m) Σ c_i K_{x_i}`.
    pub fn sampling_adjoint(&self, dp: &DesignPoints<T>, c: &[T]) -> Result<CoefVector<T>> {
        if c.len() != dp.len() {
            return Err(Error::DimensionMismatch {
                expected: dp.len(),
                got: c.len(),
            });
        }
        self.check_dims(dp, self.n)?;
        let inv_m = T::one() / T::from_usize_lossy(dp.len());
        let raw = dp.features().matvec_t(c);
        Ok(CoefVector::image(
            raw.iter()
                .zip(&self.sqrt_mu)
                .map(|(&r, &s)| r * s * inv_m)
                .collect(),
        ))
    }

    /// Diagonal of `T_ν` in `H′` coordinates.
    pub fn covariance_population(&self) -> Vec<T> {
        self.mu.clone()
    }

    /// `T_x` in `H′` coordinates: `(1/m) Σ_i √(μ_j μ_k) φ_j(x_i) φ_k(x_i)`.
    pub fn covariance_empirical(&self, dp: &DesignPoints<T>) -> Result<Mat<T>> {
        self.check_dims(dp, self.n)?;
        Ok(dp.gram().scale_rows_cols(&self.sqrt_mu, &self.sqrt_mu))
    }

    fn check_dims(&self, dp: &DesignPoints<T>, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: len,
            });
        }
        if dp.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: dp.n(),
            });
        }
        Ok(())
    }
}

/// Design points with their feature table `Φ_ij = φ_j(x_i)`.
#[derive(Clone, Debug)]
pub struct DesignPoints<T> {
    x: Vec<T>,
    phi: Mat<T>,
    gram: OnceLock<Mat<T>>,
}

impl<T: Real> DesignPoints<T> {
    pub fn new(x: Vec<T>, n: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidConfig("design needs at least one point".into()));
        }
        for &xi in &x {
            check_point(xi)?;
        }
        let mut data = vec![T::zero(); x.len() * n];
        for (xi, row) in x.iter().zip(data.chunks_mut(n.max(1))) {
            basis_row(*xi, row);
        }
        Ok(Self {
            phi: Mat::from_rows(x.len(), n, data),
            x,
            gram: OnceLock::new(),
        })
    }

    /// `m` i.i.d. uniform points on `[0, 1)`.
    pub fn uniform<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<Self> {
        let x = (0..m).map(|_| T::lit(rng.random::<f64>())).collect();
        Self::new(x, n)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n(&self) -> usize {
        self.phi.cols()
    }

    pub fn points(&self) -> &[T] {
        &self.x
    }

    pub fn features(&self) -> &Mat<T> {
        &self.phi
    }

    /// `(1/m) Φᵀ Φ`, computed once.
    pub fn gram(&self) -> &Mat<T> {
        self.gram.get_or_init(|| {
            let n = self.n();
            let mut g = Mat::<T>::zeros(n, n);
            for i in 0..self.len() {
                let row = self.phi.row(i);
                for j in 0..n {
                    let a = row[j];
                    let out = &mut g.row_mut(j)[j..];
                    for (o, &b) in out.iter_mut().zip(&row[j..]) {
                        *o += a * b;
                    }
                }
            }
            let inv_m = T::one() / T::from_usize_lossy(self.len());
            let mut g = Mat::from_fn(n, n, |i, j| g[(i, j)] * inv_m);
            g.symmetrize_from_upper();
            g
        })
    }
}

/// `N(λ) = Σ_j μ_j / (λ + μ_j)`.
pub fn effective_dimension<T: Real>(mu: &[T], lambda: T) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(Error::NonPositiveLambda(lambda.as_f64()));
    }
    Ok(mu.iter().map(|&t| t / (lambda + t)).sum())
}

/// `tr((T + λ)⁻¹ T)` for a general symmetric positive semidefinite `T`,
/// through a Cholesky factorization of `T + λ`.
pub fn effective_dimension_operator<T: Real>(op: &Mat<T>, lambda: T) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(Error::NonPositiveLambda(lambda.as_f64()));
    }
    let n = op.rows();
    let mut shifted = op.clone();
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let chol = Cholesky::new(&shifted)?;
    // tr((T+λ)⁻¹T) = n − λ tr((T+λ)⁻¹)
    let mut trace_inv = T::zero();
    let mut e = vec![T::zero(); n];
    for i in 0..n {
        e[i] = T::one();
        trace_inv += chol.solve(&e)[i];
        e[i] = T::zero();
    }
    Ok(T::from_usize_lossy(n) - lambda * trace_inv)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayRegime {
    Polynomial,
    Logarithmic,
    Neither,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayFit<T> {
    pub regime: DecayRegime,
    /// Fitted exponent in `N(λ) ≈ c λ^(-b)`.
    pub b_hat: T,
    /// `log N` against `log λ`.
    pub poly: LineFit<T>,
    /// `log N` against `log log(1/λ)`; absent when the grid reaches `λ ≥ 1`.
    pub log: Option<LineFit<T>>,
}

impl<T: Real> DecayFit<T> {
    /// Effective dimension predicted by the accepted regime's fit.
    pub fn predict(&self, lambda: T) -> Option<T> {
        match self.regime {
            DecayRegime::Polynomial => Some(self.poly.predict(lambda.ln()).exp()),
            DecayRegime::Logarithmic => self
                .log
                .map(|f| f.predict((-lambda.ln()).ln()).exp()),
            DecayRegime::Neither => None,
        }
    }
}

/// R² needed to declare a decay regime.
pub const REGIME_R2_THRESHOLD: f64 = 0.98;

/// Largest slope of `log N` against `log log(1/λ)` accepted as logarithmic
/// growth. `N ≲ log 1/λ` has slope at most 1; polynomial growth fitted on a
/// few decades shows up well above 2.
pub const LOG_SLOPE_MAX: f64 = 1.5;

/// Classify the decay of `λ ↦ N(λ)` on a grid as polynomial (`N ≲ λ^-b`),
/// logarithmic (`N ≲ log 1/λ`) or neither.
pub fn classify_decay<T: Real>(mu: &[T], lambdas: &[T]) -> Result<DecayFit<T>> {
    if lambdas.len() < 5 {
        return Err(Error::DegenerateGrid(format!(
            "need at least 5 lambda values, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|&l| !(l > T::zero()) || !l.is_finite()) {
        return Err(Error::DegenerateGrid("lambda values must be positive".into()));
    }
    let lo = lambdas.iter().copied().fold(T::infinity(), T::min);
    let hi = lambdas.iter().copied().fold(T::zero(), T::max);
    if hi / lo < T::lit(100.0) {
        return Err(Error::DegenerateGrid("grid must span at least two decades".into()));
    }
    let ns = lambdas
        .iter()
        .map(|&l| effective_dimension(mu, l))
        .collect::<Result<Vec<T>>>()?;
    let log_n: Vec<T> = ns.iter().map(|v| v.ln()).collect();
    let log_l: Vec<T> = lambdas.iter().map(|l| l.ln()).collect();
    let poly = linear_fit(&log_l, &log_n)
        .ok_or_else(|| Error::DegenerateGrid("constant lambda grid".into()))?;
    let log = if hi < T::one() {
        let ll: Vec<T> = log_l.iter().map(|&v| (-v).ln()).collect();
        linear_fit(&ll, &log_n)
    } else {
        None
    };
    let b_hat = -poly.slope;

    let n_max = ns.iter().copied().fold(T::zero(), T::max);
    let n_min = ns.iter().copied().fold(T::infinity(), T::min);
    let threshold = T::lit(REGIME_R2_THRESHOLD);
    let poly_ok = poly.r2 >= threshold && b_hat > T::zero() && b_hat < T::one();
    let log_ok = log.is_some_and(|f| f.r2 >= threshold && f.slope > T::zero() && f.slope <= T::lit(LOG_SLOPE_MAX));
    let regime = if n_max < T::lit(2.0) * n_min {
        // bounded effective dimension: no growth to classify
        DecayRegime::Neither
    } else {
        match (poly_ok, log_ok) {
            (true, true) => {
                if log.is_some_and(|f| f.r2 > poly.r2) {
                    DecayRegime::Logarithmic
                } else {
                    DecayRegime::Polynomial
                }
            }
            (true, false) => DecayRegime::Polynomial,
            (false, true) => DecayRegime::Logarithmic,
            (false, false) => DecayRegime::Neither,
        }
    };
    Ok(DecayFit {
        regime,
        b_hat,
        poly,
        log,
    })
}

/// `k` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid<T: Real>(lo: T, hi: T, k: usize) -> Vec<T> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (a + (b - a) * T::from_usize_lossy(i) / T::from_usize_lossy(k - 1)).exp())
        .collect()
}
