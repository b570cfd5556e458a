//! The spectral testbed: a trigonometric orthonormal basis on `[0, 1]`
//! under the uniform measure, in which the scale operator `L`, the kernel
//! covariance and every Hilbert-scale norm are simultaneously diagonal.
//!
//! Basis convention (1-based): `φ₁ = 1`, `φ₂ₖ = √2 cos(2πkx)`,
//! `φ₂ₖ₊₁ = √2 sin(2πkx)`. `L` has eigenvalues `j^a`, so `‖Lf‖ ≥ ‖f‖`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm2, Real};

/// Kernel eigenvalue law `μ_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MuLaw<T> {
    /// `μ_j = mu0 · j^(-1/b)`
    Polynomial { mu0: T, b: T },
    /// Explicit `μ_1, μ_2, …` (at least `n` values).
    Explicit { values: Vec<T> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestbedSpec<T> {
    pub n: usize,
    pub a: T,
    pub mu_law: MuLaw<T>,
}

impl<T: Real> Default for TestbedSpec<T> {
    fn default() -> Self {
        Self {
            n: 200,
            a: T::one(),
            mu_law: MuLaw::Polynomial {
                mu0: T::one(),
                b: T::lit(0.5),
            },
        }
    }
}

impl<T: Real> TestbedSpec<T> {
    pub fn new(n: usize, a: T, mu_law: MuLaw<T>) -> Result<Self> {
        let spec = Self { n, a, mu_law };
        spec.validate()?;
        Ok(spec)
    }

    /// Polynomial kernel law `μ_j = j^(-1/b)` with `μ₀ = 1`.
    pub fn polynomial(n: usize, a: T, b: T) -> Result<Self> {
        Self::new(n, a, MuLaw::Polynomial { mu0: T::one(), b })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("basis size n must be positive".into()));
        }
        if !(self.a >= T::zero()) || !self.a.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "scale exponent a must be finite and nonnegative, got {}",
                self.a
            )));
        }
        match &self.mu_law {
            MuLaw::Polynomial { mu0, b } => {
                if !(*mu0 > T::zero()) || !(*b > T::zero()) || !(*b < T::one()) {
                    return Err(Error::InvalidConfig(format!(
                        "polynomial law needs mu0 > 0 and b in (0,1), got mu0={mu0}, b={b}"
                    )));
                }
            }
            MuLaw::Explicit { values } => {
                if values.len() < self.n {
                    return Err(Error::InvalidConfig(format!(
                        "explicit law has {} values, need {}",
                        values.len(),
                        self.n
                    )));
                }
                let head = &values[..self.n];
                if head.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
                    return Err(Error::InvalidConfig("eigenvalues must be positive".into()));
                }
                if head.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidConfig("eigenvalues must be non-increasing".into()));
                }
            }
        }
        Ok(())
    }

    /// Copy of this testbed with a different scale exponent.
    pub fn with_scale(&self, a: T) -> Self {
        Self {
            a,
            ..self.clone()
        }
    }

    /// `μ_1, …, μ_n`
    pub fn mu(&self) -> Vec<T> {
        match &self.mu_law {
            MuLaw::Polynomial { mu0, b } => {
                let e = -T::one() / *b;
                (1..=self.n)
                    .map(|j| *mu0 * T::from_usize_lossy(j).powf(e))
                    .collect()
            }
            MuLaw::Explicit { values } => values[..self.n].to_vec(),
        }
    }

    /// Eigenvalues of `L^s`: `j^(a s)` for `j = 1..=n`.
    pub fn l_power_diag(&self, s: T) -> Vec<T> {
        let e = self.a * s;
        (1..=self.n)
            .map(|j| T::from_usize_lossy(j).powf(e))
            .collect()
    }

    /// `φ_j(x)` with bounds checking.
    pub fn basis_eval(&self, j: usize, x: T) -> Result<T> {
        if j == 0 || j > self.n {
            return Err(Error::IndexOutOfRange { index: j, n: self.n });
        }
        check_point(x)?;
        Ok(basis_value(j, x))
    }

    /// `‖f‖_{H_s}`
    pub fn hs_norm(&self, f: &CoefVector<T>, s: T) -> Result<T> {
        f.require(Space::Primal)?;
        self.check_len(f)?;
        let e = self.a * s * T::lit(2.0);
        let sum = f
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| T::from_usize_lossy(i + 1).powf(e) * c * c)
            .sum::<T>();
        Ok(sum.sqrt())
    }

    /// `L^s f`
    pub fn apply_l_power(&self, f: &CoefVector<T>, s: T) -> Result<CoefVector<T>> {
        f.require(Space::Primal)?;
        self.check_len(f)?;
        let w = self.l_power_diag(s);
        Ok(CoefVector::primal(
            f.coeffs.iter().zip(&w).map(|(&c, &d)| c * d).collect(),
        ))
    }

    /// Slack of the interpolation inequality
    /// `‖f‖_r ≤ ‖f‖_t^((s-r)/(s-t)) ‖f‖_s^((r-t)/(s-t))`; nonnegative up to
    /// round-off for every `f`.
    pub fn interpolation_gap(&self, f: &CoefVector<T>, t: T, r: T, s: T) -> Result<T> {
        if !(t < r && r < s) {
            return Err(Error::ScaleOrdering {
                t: t.as_f64(),
                r: r.as_f64(),
                s: s.as_f64(),
            });
        }
        let nt = self.hs_norm(f, t)?;
        let nr = self.hs_norm(f, r)?;
        let ns = self.hs_norm(f, s)?;
        let theta = (s - r) / (s - t);
        let upper = if nt == T::zero() || ns == T::zero() {
            T::zero()
        } else {
            (theta * nt.ln() + (T::one() - theta) * ns.ln()).exp()
        };
        Ok(upper - nr)
    }

    pub(crate) fn check_len(&self, f: &CoefVector<T>) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: f.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_point<T: Real>(x: T) -> Result<()> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::PointOutOfDomain(x.as_f64()));
    }
    Ok(())
}

/// `φ_j(x)` for 1-based `j`, no checks.
pub fn basis_value<T: Real>(j: usize, x: T) -> T {
    if j == 1 {
        return T::one();
    }
    let k = T::from_usize_lossy(j / 2);
    let arg = T::TAU() * k * x;
    let root2 = T::SQRT_2();
    if j.is_multiple_of(2) {
        root2 * arg.cos()
    } else {
        root2 * arg.sin()
    }
}

/// Fill `out[j-1] = φ_j(x)` for `j = 1..=out.len()` using the angle-addition
/// recurrence.
pub fn basis_row<T: Real>(x: T, out: &mut [T]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = T::one();
    let root2 = T::SQRT_2();
    let (s1, c1) = (T::TAU() * x).sin_cos();
    let (mut s, mut c) = (s1, c1);
    let mut k = 1;
    loop {
        let j_cos = 2 * k;
        if j_cos > n {
            break;
        }
        out[j_cos - 1] = root2 * c;
        if j_cos < n {
            out[j_cos] = root2 * s;
        }
        let c_next = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = c_next;
        k += 1;
    }
}

/// Which Hilbert space a coefficient vector lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// `H`, coordinates w.r.t. the orthonormal basis `{e_j}`.
    Primal,
    /// `H′`, coordinates w.r.t. the orthonormal system `{√μ_j φ_j}`.
    Image,
}

impl Space {
    fn label(self) -> &'static str {
        match self {
            Space::Primal => "H",
            Space::Image => "H'",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefVector<T> {
    pub coeffs: Vec<T>,
    pub space: Space,
}

impl<T: Real> CoefVector<T> {
    pub fn primal(coeffs: Vec<T>) -> Self {
        Self {
            coeffs,
            space: Space::Primal,
        }
    }

    pub fn image(coeffs: Vec<T>) -> Self {
        Self {
            coeffs,
            space: Space::Image,
        }
    }

    pub fn zeros(space: Space, n: usize) -> Self {
        Self {
            coeffs: vec![T::zero(); n],
            space,
        }
    }

    /// Unit vector at 1-based index `j`.
    pub fn unit(space: Space, n: usize, j: usize) -> Self {
        let mut v = Self::zeros(space, n);
        v.coeffs[j - 1] = T::one();
        v
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Norm of the ambient space (`H` or `H′`), i.e. the Euclidean
    /// coefficient norm.
    pub fn norm(&self) -> T {
        norm2(&self.coeffs)
    }

    pub fn require(&self, space: Space) -> Result<()> {
        if self.space != space {
            return Err(Error::SpaceMismatch {
                expected: space.label(),
                got: self.space.label(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(T::one(), other)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-T::one(), other)
    }

    /// `self + alpha · other`
    pub fn axpy(&self, alpha: T, other: &Self) -> Self {
        debug_assert_eq!(self.space, other.space);
        debug_assert_eq!(self.len(), other.len());
        Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| a + alpha * b)
                .collect(),
            space: self.space,
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&a| a * alpha).collect(),
            space: self.space,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}
