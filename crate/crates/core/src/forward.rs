//! Nonlinear forward operators `A: H → H′` with Fréchet derivatives.
//!
//! Both operators share the diagonal smoothing map `D = diag(d_j)` with
//! `d_j = j^(-ap) μ_j^(-1/2)`, chosen so that `‖I_ν D h‖_{L²} = ‖h‖_{H_{-p}}`
//! holds exactly. The Hammerstein operator is
//!
//! ```text
//! A(f)     = D (f + c · f⊙f)
//! A′(f) h  = D (h + 2c · f⊙h)
//! ```
//!
//! where `⊙` multiplies the represented functions `Σ f_j φ_j` pointwise and
//! projects back onto the first `n` modes. The product is evaluated
//! pseudo-spectrally on a uniform grid large enough to be alias-free.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::{dot, norm2, Real};
use crate::testbed::{basis_row, CoefVector, Space, TestbedSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    DiagonalLinear,
    Hammerstein,
}

/// Operator configuration as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpConfig<T> {
    pub kind: OpKind,
    pub p: T,
    #[serde(default)]
    pub c: T,
    /// Pseudo-spectral grid size; defaults to `4n`.
    #[serde(default)]
    pub grid_size: Option<usize>,
}

impl<T: Real> Default for OpConfig<T> {
    fn default() -> Self {
        Self {
            kind: OpKind::Hammerstein,
            p: T::one(),
            c: T::lit(0.1),
            grid_size: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOp<T> {
    kind: OpKind,
    p: T,
    c: T,
    n: usize,
    /// `d_j = j^(-ap) μ_j^(-1/2)`
    d: Vec<T>,
    /// `w_j = j^(-ap)`, the `H_{-p}` weights and the L² image of `D`
    w: Vec<T>,
    mu: Vec<T>,
    /// `grid[(g, j)] = φ_{j+1}(g / G)`
    grid: Mat<T>,
    domain: Option<(CoefVector<T>, T)>,
}

/// Empirical frame bounds of the link condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkEstimate<T> {
    pub alpha_hat: T,
    pub beta_hat: T,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate<T> {
    /// Largest `‖A′(f)‖_{H→H′}` over the sampled ball.
    pub j_hat: T,
    /// Largest `‖I_ν(A′(f_ρ) − A′(f))‖_{H_{-p}→L²} / ‖f_ρ − f‖_H`.
    pub gamma_hat: T,
    pub link: LinkEstimate<T>,
    /// `γ̂ · radius ≤ α̂² / (2β̂)`
    pub small_nonlinearity: bool,
    pub radius: T,
}

/// Power iteration on `AᵀA` for the largest singular value.
const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITER: usize = 5000;

impl<T: Real> ForwardOp<T> {
    pub fn new(spec: &TestbedSpec<T>, config: &OpConfig<T>) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        if !(config.p > T::zero()) {
            return Err(Error::InvalidConfig(format!("smoothing degree p must be positive, got {}", config.p)));
        }
        let c = match config.kind {
            OpKind::DiagonalLinear => T::zero(),
            OpKind::Hammerstein => config.c,
        };
        if !(c >= T::zero()) {
            return Err(Error::InvalidConfig(format!("nonlinearity c must be nonnegative, got {c}")));
        }
        let grid_size = config.grid_size.unwrap_or(4 * n);
        // f², φ_j and φ_k reach frequency 3⌊n/2⌋ together; the trapezoid
        // rule is exact below the grid size.
        let min_grid = 3 * (n / 2) + 1;
        if grid_size < min_grid {
            return Err(Error::InvalidConfig(format!(
                "grid_size {grid_size} aliases; need at least {min_grid} for n={n}"
            )));
        }
        let mu = spec.mu();
        let w = spec.l_power_diag(-config.p);
        let d = w.iter().zip(&mu).map(|(&wj, &m)| wj / m.sqrt()).collect();
        let mut table = vec![T::zero(); grid_size * n];
        for (g, row) in table.chunks_mut(n).enumerate() {
            basis_row(T::from_usize_lossy(g) / T::from_usize_lossy(grid_size), row);
        }
        Ok(Self {
            kind: config.kind,
            p: config.p,
            c,
            n,
            d,
            w,
            mu,
            grid: Mat::from_rows(grid_size, n, table),
            domain: None,
        })
    }

    /// Attach the domain ball `B_d(center)`; violations are logged by
    /// [`apply`](Self::apply) and reported by [`check_domain`](Self::check_domain).
    pub fn with_domain(mut self, center: CoefVector<T>, radius: T) -> Self {
        self.domain = Some((center, radius));
        self
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid_size(&self) -> usize {
        self.grid.rows()
    }

    /// Kernel eigenvalues of the testbed the operator was built on.
    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn smoothing_diag(&self) -> &[T] {
        &self.d
    }

    /// `j^(-ap)`: coefficient of `I_ν D e_j` on `φ_j`.
    pub fn l2_weights(&self) -> &[T] {
        &self.w
    }

    pub fn check_domain(&self, f: &CoefVector<T>) -> Result<()> {
        if let Some((center, radius)) = &self.domain {
            let dist = f.sub(center).norm();
            if dist > *radius {
                return Err(Error::DomainBall {
                    distance: dist.as_f64(),
                    radius: radius.as_f64(),
                });
            }
        }
        Ok(())
    }

    fn check_input(&self, f: &CoefVector<T>) -> Result<()> {
        f.require(Space::Primal)?;
        if f.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: f.len(),
            });
        }
        if let Err(e) = self.check_domain(f) {
            warn!("{e}");
        }
        Ok(())
    }

    /// Function values of `Σ coeffs_j φ_j` on the grid.
    fn synthesize(&self, coeffs: &[T]) -> Vec<T> {
        self.grid.matvec(coeffs)
    }

    fn analyze(&self, values: &[T]) -> Vec<T> {
        let inv_g = T::one() / T::from_usize_lossy(self.grid.rows());
        let mut out = self.grid.matvec_t(values);
        for v in &mut out {
            *v *= inv_g;
        }
        out
    }

    /// `P_n(f ⊙ h)` computed on the grid.
    pub fn pointwise_product(&self, f: &[T], h: &[T]) -> Vec<T> {
        let fv = self.synthesize(f);
        let hv = self.synthesize(h);
        let prod: Vec<T> = fv.iter().zip(&hv).map(|(&a, &b)| a * b).collect();
        self.analyze(&prod)
    }

    /// `f + c · f⊙f` in `H` coordinates.
    fn inner_map(&self, f: &[T]) -> Vec<T> {
        if self.c == T::zero() {
            return f.to_vec();
        }
        let sq = self.pointwise_product(f, f);
        f.iter().zip(&sq).map(|(&a, &s)| a + self.c * s).collect()
    }

    pub fn apply(&self, f: &CoefVector<T>) -> Result<CoefVector<T>> {
        self.check_input(f)?;
        let u = self.inner_map(&f.coeffs);
        Ok(CoefVector::image(
            u.iter().zip(&self.d).map(|(&a, &dj)| a * dj).collect(),
        ))
    }

    /// Coefficients of `I_ν A(f)` on `{φ_j}`: `j^(-ap) (f + c f⊙f)_j`.
    pub fn function_coeffs(&self, f: &[T]) -> Vec<T> {
        let u = self.inner_map(f);
        u.iter().zip(&self.w).map(|(&a, &wj)| a * wj).collect()
    }

    pub fn frechet_apply(&self, f: &CoefVector<T>, h: &CoefVector<T>) -> Result<CoefVector<T>> {
        self.check_input(f)?;
        self.check_input_dir(h)?;
        let inner = self.derivative_inner(&f.coeffs, &h.coeffs);
        Ok(CoefVector::image(
            inner.iter().zip(&self.d).map(|(&a, &dj)| a * dj).collect(),
        ))
    }

    /// `A′(f)* g` for `g ∈ H′`.
    pub fn frechet_adjoint(&self, f: &CoefVector<T>, g: &CoefVector<T>) -> Result<CoefVector<T>> {
        self.check_input(f)?;
        g.require(Space::Image)?;
        let dg: Vec<T> = g.coeffs.iter().zip(&self.d).map(|(&a, &dj)| a * dj).collect();
        // the multiplication operator is symmetric
        Ok(CoefVector::primal(self.derivative_inner(&f.coeffs, &dg)))
    }

    fn check_input_dir(&self, h: &CoefVector<T>) -> Result<()> {
        h.require(Space::Primal)?;
        if h.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: h.len(),
            });
        }
        Ok(())
    }

    /// `h + 2c · f⊙h`
    fn derivative_inner(&self, f: &[T], h: &[T]) -> Vec<T> {
        if self.c == T::zero() {
            return h.to_vec();
        }
        let two_c = T::lit(2.0) * self.c;
        let fh = self.pointwise_product(f, h);
        h.iter().zip(&fh).map(|(&a, &b)| a + two_c * b).collect()
    }

    /// Galerkin matrix `M_f[j,k] = ∫ f φ_j φ_k` in closed form, using the
    /// product-to-sum identities of the trigonometric basis.
    pub fn multiplication_matrix(&self, f: &[T]) -> Mat<T> {
        multiplication_matrix(f)
    }

    /// Jacobian of [`function_coeffs`](Self::function_coeffs) at `f`:
    /// `diag(j^(-ap)) (I + 2c M_f)`.
    pub fn function_jacobian(&self, f: &[T]) -> Mat<T> {
        let n = self.n;
        if self.c == T::zero() {
            return Mat::from_diag(&self.w);
        }
        let two_c = T::lit(2.0) * self.c;
        let m = multiplication_matrix(f);
        Mat::from_fn(n, n, |i, j| {
            let id = if i == j { T::one() } else { T::zero() };
            self.w[i] * (id + two_c * m[(i, j)])
        })
    }

    /// `‖I_ν g‖_{L²}` for `g ∈ H′`.
    pub fn l2_norm(&self, g: &CoefVector<T>) -> T {
        g.coeffs
            .iter()
            .zip(&self.mu)
            .map(|(&v, &m)| m * v * v)
            .sum::<T>()
            .sqrt()
    }

    /// `‖h‖_{H_{-p}}` in this operator's scale.
    pub fn negative_norm(&self, h: &[T]) -> T {
        h.iter()
            .zip(&self.w)
            .map(|(&v, &wj)| wj * wj * v * v)
            .sum::<T>()
            .sqrt()
    }

    /// Taylor remainder `A(f) − A(f_ref) − A′(f_ref)(f − f_ref)` measured in
    /// `H′` and in `L²`.
    pub fn linearization_residual(&self, f: &CoefVector<T>, f_ref: &CoefVector<T>) -> Result<(T, T)> {
        let r = self.taylor_remainder(f, f_ref)?;
        Ok((r.norm(), self.l2_norm(&r)))
    }

    pub fn taylor_remainder(&self, f: &CoefVector<T>, f_ref: &CoefVector<T>) -> Result<CoefVector<T>> {
        let af = self.apply(f)?;
        let aref = self.apply(f_ref)?;
        let lin = self.frechet_apply(f_ref, &f.sub(f_ref))?;
        Ok(CoefVector::image(
            af.coeffs
                .iter()
                .zip(&aref.coeffs)
                .zip(&lin.coeffs)
                .map(|((&a, &b), &l)| a - b - l)
                .collect(),
        ))
    }

    /// Ratio `‖I_ν A′(f_ref) g‖_{L²} / ‖g‖_{H_{-p}}`.
    pub fn link_ratio(&self, f_ref: &CoefVector<T>, g: &CoefVector<T>) -> Result<T> {
        self.check_input(f_ref)?;
        self.check_input_dir(g)?;
        let denom = self.negative_norm(&g.coeffs);
        if denom == T::zero() {
            return Err(Error::ZeroDirection);
        }
        let inner = self.derivative_inner(&f_ref.coeffs, &g.coeffs);
        Ok(self.negative_norm(&inner) / denom)
    }

    /// Empirical link-condition bounds from `trials` Gaussian directions.
    pub fn link_check<R: Rng + ?Sized>(&self, f_ref: &CoefVector<T>, trials: usize, rng: &mut R) -> Result<LinkEstimate<T>> {
        if trials == 0 {
            return Err(Error::InvalidConfig("link_check needs trials >= 1".into()));
        }
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for _ in 0..trials {
            let g = gaussian_vector(self.n, rng);
            let r = self.link_ratio(f_ref, &g)?;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        Ok(LinkEstimate {
            alpha_hat: lo,
            beta_hat: hi,
            trials,
        })
    }

    /// `‖A′(f)‖_{H→H′}` by power iteration.
    pub fn derivative_norm(&self, f: &CoefVector<T>) -> Result<T> {
        self.check_input(f)?;
        let d = &self.d;
        let apply = |h: &[T]| -> Vec<T> {
            self.derivative_inner(&f.coeffs, h)
                .iter()
                .zip(d)
                .map(|(&a, &dj)| a * dj)
                .collect()
        };
        let apply_t = |g: &[T]| -> Vec<T> {
            let dg: Vec<T> = g.iter().zip(d).map(|(&a, &dj)| a * dj).collect();
            self.derivative_inner(&f.coeffs, &dg)
        };
        Ok(power_singular(self.n, apply, apply_t).0)
    }

    /// `2c ‖W M_δ W⁻¹‖₂` with `W = diag(j^(-ap))`: the `H_{-p} → L²` norm of
    /// `I_ν (A′(f) − A′(f + δ))`.
    fn derivative_gap_norm(&self, delta: &[T]) -> (T, Vec<T>, Vec<T>) {
        let two_c = T::lit(2.0) * self.c;
        let w = &self.w;
        let apply = |u: &[T]| -> Vec<T> {
            let h: Vec<T> = u.iter().zip(w).map(|(&a, &wj)| a / wj).collect();
            self.pointwise_product(delta, &h)
                .iter()
                .zip(w)
                .map(|(&a, &wj)| two_c * a * wj)
                .collect()
        };
        let apply_t = |g: &[T]| -> Vec<T> {
            let h: Vec<T> = g.iter().zip(w).map(|(&a, &wj)| a * wj).collect();
            self.pointwise_product(delta, &h)
                .iter()
                .zip(w)
                .map(|(&a, &wj)| two_c * a / wj)
                .collect()
        };
        power_singular(self.n, apply, apply_t)
    }

    /// Sample the ball `‖f − f_ref‖ = radius` to estimate the derivative
    /// bound `J` and the Lipschitz constant `γ`. The largest sampled `γ`
    /// ratio is then refined by alternating ascent over the direction, which
    /// only increases it.
    pub fn estimate_constants<R: Rng + ?Sized>(
        &self,
        f_ref: &CoefVector<T>,
        trials: usize,
        radius: T,
        rng: &mut R,
    ) -> Result<ConstantEstimate<T>> {
        if trials == 0 {
            return Err(Error::InvalidConfig("estimate_constants needs trials >= 1".into()));
        }
        self.check_input(f_ref)?;
        let mut j_hat = self.derivative_norm(f_ref)?;
        let mut gamma_hat = T::zero();
        let mut best_dir: Option<Vec<T>> = None;
        for _ in 0..trials {
            let dir = unit_direction(self.n, rng);
            let f = f_ref.axpy(radius, &dir);
            j_hat = j_hat.max(self.derivative_norm(&f)?);
            if self.c > T::zero() {
                let (g, _, _) = self.derivative_gap_norm(&dir.coeffs);
                if g > gamma_hat {
                    gamma_hat = g;
                    best_dir = Some(dir.coeffs);
                }
            }
        }
        if let Some(dir) = best_dir {
            gamma_hat = gamma_hat.max(self.refine_gamma(dir));
        }
        let link = self.link_check(f_ref, trials, rng)?;
        let small = gamma_hat * radius <= link.alpha_hat * link.alpha_hat / (T::lit(2.0) * link.beta_hat);
        Ok(ConstantEstimate {
            j_hat,
            gamma_hat,
            link,
            small_nonlinearity: small,
            radius,
        })
    }

    fn refine_gamma(&self, mut dir: Vec<T>) -> T {
        let mut best = T::zero();
        for _ in 0..50 {
            let (sigma, left, right) = self.derivative_gap_norm(&dir);
            if sigma <= best * (T::one() + T::lit(1e-9)) {
                best = best.max(sigma);
                break;
            }
            best = sigma;
            // gradient of gᵀ W M_δ W⁻¹ u with respect to δ
            let wg: Vec<T> = left.iter().zip(&self.w).map(|(&a, &wj)| a * wj).collect();
            let wu: Vec<T> = right.iter().zip(&self.w).map(|(&a, &wj)| a / wj).collect();
            let grad = self.pointwise_product(&wg, &wu);
            let norm = norm2(&grad);
            if norm == T::zero() {
                break;
            }
            dir = grad.iter().map(|&v| v / norm).collect();
        }
        best
    }
}

/// Closed-form `∫₀¹ f φ_j φ_k dx` for `f = Σ f_l φ_l` (truncated to the
/// modes present in `f`).
pub fn multiplication_matrix<T: Real>(f: &[T]) -> Mat<T> {
    let n = f.len();
    let inv_root2 = T::FRAC_1_SQRT_2();
    let root2 = T::SQRT_2();
    // ∫ f cos(2πs x) and ∫ f sin(2πs x) for s ≥ 0
    let cos_coef = |s: isize| -> T {
        let s = s.unsigned_abs();
        if s == 0 {
            f[0]
        } else if 2 * s <= n {
            f[2 * s - 1] * inv_root2
        } else {
            T::zero()
        }
    };
    let sin_coef = |s: isize| -> T {
        let (sign, s) = if s < 0 { (-T::one(), s.unsigned_abs()) } else { (T::one(), s as usize) };
        if s == 0 {
            T::zero()
        } else if 2 * s < n {
            sign * f[2 * s] * inv_root2
        } else {
            T::zero()
        }
    };
    #[derive(Clone, Copy)]
    enum B {
        One,
        Cos(isize),
        Sin(isize),
    }
    let kind = |idx: usize| -> B {
        let j = idx + 1;
        if j == 1 {
            B::One
        } else if j.is_multiple_of(2) {
            B::Cos((j / 2) as isize)
        } else {
            B::Sin((j / 2) as isize)
        }
    };
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        for k in i..n {
            let v = match (kind(i), kind(k)) {
                (B::One, B::One) => cos_coef(0),
                (B::One, B::Cos(b)) | (B::Cos(b), B::One) => root2 * cos_coef(b),
                (B::One, B::Sin(b)) | (B::Sin(b), B::One) => root2 * sin_coef(b),
                (B::Cos(a), B::Cos(b)) => cos_coef(a - b) + cos_coef(a + b),
                (B::Sin(a), B::Sin(b)) => cos_coef(a - b) - cos_coef(a + b),
                (B::Sin(a), B::Cos(b)) => sin_coef(a + b) + sin_coef(a - b),
                (B::Cos(a), B::Sin(b)) => sin_coef(a + b) + sin_coef(b - a),
            };
            m[(i, k)] = v;
        }
    }
    m.symmetrize_from_upper();
    m
}

/// Largest singular value of a matrix-free operator, with its left and
/// right singular vectors.
fn power_singular<T: Real>(
    n: usize,
    apply: impl Fn(&[T]) -> Vec<T>,
    apply_t: impl Fn(&[T]) -> Vec<T>,
) -> (T, Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<T> = (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let tol = T::lit(POWER_TOL);
    let mut sigma = T::zero();
    for _ in 0..POWER_MAX_ITER {
        let u = apply(&v);
        let s = norm2(&u);
        if s == T::zero() {
            return (T::zero(), u, v);
        }
        let mut next = apply_t(&u);
        let nn = norm2(&next);
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
        let converged = (s - sigma).abs() <= tol * s;
        sigma = s;
        if converged {
            break;
        }
    }
    let u = apply(&v);
    let s = norm2(&u);
    let left: Vec<T> = if s > T::zero() { u.iter().map(|&x| x / s).collect() } else { u };
    (sigma.max(s), left, v)
}

fn gaussian_vector<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CoefVector<T> {
    CoefVector::primal((0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect())
}

/// Uniformly distributed unit vector in `H`.
pub fn unit_direction<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CoefVector<T> {
    loop {
        let g: CoefVector<T> = gaussian_vector(n, rng);
        let norm = g.norm();
        if norm > T::zero() {
            return g.scale(T::one() / norm);
        }
    }
}

/// `⟨a, b⟩` convenience for tests and diagnostics.
pub fn inner<T: Real>(a: &CoefVector<T>, b: &CoefVector<T>) -> T {
    dot(&a.coeffs, &b.coeffs)
}
