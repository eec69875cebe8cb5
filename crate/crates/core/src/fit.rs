//! Ordinary least squares on a line.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T> {
    pub intercept: T,
    pub slope: T,
    /// Root-mean-square residual.
    pub rms: T,
    /// Standard error of the slope.
    pub slope_se: T,
}

/// Fits `y = intercept + slope x`. Needs at least three points.
pub fn line<T: Real>(x: &[T], y: &[T]) -> Option<LineFit<T>> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let nf = T::idx(n);
    let mx = x.iter().copied().sum::<T>() / nf;
    let my = y.iter().copied().sum::<T>() / nf;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (a, b) in x.iter().zip(y) {
        let dx = *a - mx;
        sxx += dx * dx;
        sxy += dx * (*b - my);
    }
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss = T::zero();
    for (a, b) in x.iter().zip(y) {
        let r = *b - intercept - slope * *a;
        ss += r * r;
    }
    let rms = (ss / nf).sqrt();
    let slope_se = (ss / (nf - T::lit(2.0)) / sxx).sqrt();
    Some(LineFit { intercept, slope, rms, slope_se })
}
