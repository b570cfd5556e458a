//! Centered observation noise with certified Bernstein constants.
//!
//! A noise law satisfies the Bernstein-type moment condition with
//! constants `(M, Σ)` when
//!
//! ```text
//! E[ e^{|ε|/M} − |ε|/M − 1 ] ≤ Σ² / (2M²)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Uniform on `[-sigma, sigma]`.
    BoundedUniform,
}

/// Noise law together with a certified Bernstein pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseConfig<T>", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct NoiseModel<T> {
    pub kind: NoiseKind,
    pub sigma: T,
    #[serde(rename = "M")]
    pub bernstein_m: T,
    #[serde(rename = "Sigma")]
    pub bernstein_sigma: T,
}

/// JSON form; a missing `(M, Σ)` pair is filled with the default
/// certified pair for the law.
#[derive(Clone, Copy, Debug, Deserialize)]
pub struct NoiseConfig<T> {
    pub kind: NoiseKind,
    pub sigma: T,
    #[serde(rename = "M", default)]
    pub bernstein_m: Option<T>,
    #[serde(rename = "Sigma", default)]
    pub bernstein_sigma: Option<T>,
}

impl<T: Real> TryFrom<NoiseConfig<T>> for NoiseModel<T> {
    type Error = Error;

    fn try_from(cfg: NoiseConfig<T>) -> Result<Self> {
        match (cfg.bernstein_m, cfg.bernstein_sigma) {
            (Some(m), Some(s)) => Self::with_pair(cfg.kind, cfg.sigma, m, s),
            (None, None) => Self::certified(cfg.kind, cfg.sigma),
            _ => Err(Error::InvalidConfig("noise config needs both M and Sigma or neither".into())),
        }
    }
}

impl<T: Real> Default for NoiseModel<T> {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma: T::lit(0.1),
            bernstein_m: T::lit(0.4),
            bernstein_sigma: T::lit(0.2),
        }
    }
}

/// Outcome of a Bernstein check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernsteinCheck {
    pub holds: bool,
    /// `E[e^{|ε|/M} − |ε|/M − 1]`
    pub integral: f64,
    /// `Σ² / (2M²)`
    pub bound: f64,
    /// `bound − integral`
    pub slack: f64,
}

const QUAD_TOL: f64 = 1e-12;

impl<T: Real> NoiseModel<T> {
    /// Model with an explicit pair; the pair must certify.
    pub fn with_pair(kind: NoiseKind, sigma: T, m: T, big_sigma: T) -> Result<Self> {
        let model = Self {
            kind,
            sigma,
            bernstein_m: m,
            bernstein_sigma: big_sigma,
        };
        model.validate()?;
        let check = certify_bernstein(&model, m, big_sigma)?;
        if !check.holds {
            return Err(Error::InvalidConfig(format!(
                "Bernstein pair (M={m}, Sigma={big_sigma}) fails: integral {} > {}",
                check.integral, check.bound
            )));
        }
        Ok(model)
    }

    /// Model with the default pair: `M = 4σ, Σ = 2σ` for Gaussian noise and
    /// `M = s, Σ² = 2s²(e − 2)` for uniform noise on `[-s, s]`, verified by
    /// [`certify_bernstein`].
    pub fn certified(kind: NoiseKind, sigma: T) -> Result<Self> {
        let (m, s) = match kind {
            NoiseKind::Gaussian => (T::lit(4.0) * sigma, T::lit(2.0) * sigma),
            NoiseKind::BoundedUniform => (sigma, sigma * (T::lit(2.0) * (T::E() - T::lit(2.0))).sqrt()),
        };
        if sigma == T::zero() {
            // any positive pair certifies the point mass at zero
            return Self::with_pair(kind, sigma, T::one(), T::one());
        }
        Self::with_pair(kind, sigma, m, s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.bernstein_m > T::zero() && self.bernstein_sigma > T::zero()) {
            return Err(Error::InvalidConfig("Bernstein M and Sigma must be positive".into()));
        }
        Ok(())
    }

    /// One centered draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        sample_noise(self, rng)
    }
}

pub fn sample_noise<T: Real, R: Rng + ?Sized>(model: &NoiseModel<T>, rng: &mut R) -> T {
    let s = model.sigma.as_f64();
    let draw = match model.kind {
        NoiseKind::Gaussian => s * rng.sample::<f64, _>(StandardNormal),
        NoiseKind::BoundedUniform => s * (2.0 * rng.random::<f64>() - 1.0),
    };
    T::lit(draw)
}

/// `E[e^{|ε|/M} − |ε|/M − 1]`: closed form for uniform noise,
/// double-exponential quadrature for Gaussian noise.
pub fn bernstein_integral<T: Real>(model: &NoiseModel<T>, m: T) -> Result<f64> {
    let m = m.as_f64();
    let sigma = model.sigma.as_f64();
    if !(m > 0.0) {
        return Err(Error::InvalidConfig(format!("Bernstein M must be positive, got {m}")));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    match model.kind {
        NoiseKind::BoundedUniform => {
            let r = sigma / m;
            // (M/s)(e^{s/M} − 1) − s/(2M) − 1, rearranged for small r
            Ok(r.exp_m1() / r - 1.0 - r / 2.0)
        }
        NoiseKind::Gaussian => {
            // in units z = ε/σ: 2 ∫₀^∞ g(zσ/M) φ(z) dz, integrand peaks at z = σ/M
            let r = sigma / m;
            let g = |z: f64| {
                let t = z * r;
                let log_phi = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
                2.0 * (t.exp_m1() - t) * log_phi.exp()
            };
            let peak = r;
            let upper = peak + 40.0;
            let mut total = 0.0;
            let mut err = 0.0;
            for (a, b) in [(0.0, peak), (peak, peak + 10.0), (peak + 10.0, upper)] {
                if b > a {
                    let out = quadrature::integrate(g, a, b, QUAD_TOL);
                    total += out.integral;
                    err += out.error_estimate;
                }
            }
            if !total.is_finite() || err > 1e-8 * total.abs().max(1e-300).max(QUAD_TOL) {
                return Err(Error::Quadrature {
                    estimate: total,
                    error: err,
                });
            }
            Ok(total)
        }
    }
}

pub fn certify_bernstein<T: Real>(model: &NoiseModel<T>, m: T, big_sigma: T) -> Result<BernsteinCheck> {
    if !(m > T::zero() && big_sigma > T::zero()) {
        return Err(Error::InvalidConfig("Bernstein M and Sigma must be positive".into()));
    }
    let integral = bernstein_integral(model, m)?;
    let (mf, sf) = (m.as_f64(), big_sigma.as_f64());
    let bound = sf * sf / (2.0 * mf * mf);
    Ok(BernsteinCheck {
        holds: integral <= bound,
        integral,
        bound,
        slack: bound - integral,
    })
}

/// For each `M`, the smallest `Σ = M √(2 · integral(M))` that certifies.
pub fn bernstein_sweep<T: Real>(model: &NoiseModel<T>, ms: &[T]) -> Result<Vec<(T, T)>> {
    ms.iter()
        .map(|&m| {
            let integral = bernstein_integral(model, m)?;
            Ok((m, m * T::lit((2.0 * integral).sqrt())))
        })
        .collect()
}
