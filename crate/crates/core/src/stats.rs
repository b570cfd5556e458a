//! Least-squares line fits and order statistics.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Coefficient of determination; 1 for a perfect fit.
    pub r2: T,
    /// Standard error of the slope (0 with two points).
    pub slope_se: T,
}

impl<T: Real> LineFit<T> {
    pub fn predict(&self, x: T) -> T {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y ≈ intercept + slope · x`. Returns `None` for
/// fewer than two points or constant `x`.
pub fn linear_fit<T: Real>(xs: &[T], ys: &[T]) -> Option<LineFit<T>> {
    let k = xs.len();
    if k < 2 || ys.len() != k {
        return None;
    }
    let kk = T::from_usize_lossy(k);
    let mx = xs.iter().copied().sum::<T>() / kk;
    let my = ys.iter().copied().sum::<T>() / kk;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut syy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<T>();
    let r2 = if syy == T::zero() {
        T::one()
    } else {
        T::one() - sse / syy
    };
    let slope_se = if k > 2 {
        (sse / T::from_usize_lossy(k - 2) / sxx).sqrt()
    } else {
        T::zero()
    };
    Some(LineFit {
        slope,
        intercept,
        r2,
        slope_se,
    })
}

/// Linearly interpolated sample quantile (Hyndman-Fan type 7). `level` in
/// `[0, 1]`; NaN for empty input.
pub fn quantile<T: Real>(values: &[T], level: T) -> T {
    if values.is_empty() {
        return T::nan();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let h = T::from_usize_lossy(sorted.len() - 1) * level.max(T::zero()).min(T::one());
    let lo = h.floor();
    let i = lo.to_usize().unwrap_or(0);
    let frac = h - lo;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn median<T: Real>(values: &[T]) -> T {
    quantile(values, T::lit(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law_slope() {
        let ms = [250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0f64];
        let xs: Vec<f64> = ms.iter().map(|m| m.ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -0.25 * x + 1.7).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope + 0.25).abs() < 1e-10);
        assert!((fit.intercept - 1.7).abs() < 1e-10);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(linear_fit::<f64>(&[1.0], &[2.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
        assert!(quantile::<f64>(&[], 0.5).is_nan());
    }

    #[test]
    fn quantiles() {
        let v = [4.0f64, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert!((quantile(&v, 0.9) - 4.6).abs() < 1e-12);
    }
}
