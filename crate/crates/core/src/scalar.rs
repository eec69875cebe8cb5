//! Scalar abstraction shared by every module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real floating-point scalar. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    /// Converts a count or index.
    #[inline]
    fn idx(n: usize) -> Self {
        Self::from_usize(n).expect("index representable")
    }

    /// Lossy conversion used for messages and reports.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest `x` with `exp(x)` finite.
    #[inline]
    fn ln_max() -> Self {
        Self::max_value().ln()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn cplx<T: Real>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

#[inline]
pub(crate) fn real<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

/// `ln|1 - x|` with its sign, accurate for small `x`.
#[inline]
pub(crate) fn ln_abs_one_minus<T: Real>(x: T) -> (T, T) {
    let y = T::one() - x;
    let l = if x.abs() < T::lit(0.5) { (-x).ln_1p() } else { y.abs().ln() };
    (l, if y < T::zero() { -T::one() } else { T::one() })
}

/// `ln(1 - w)` on the principal branch, accurate for small `w`.
#[inline]
pub(crate) fn ln_one_minus<T: Real>(w: C<T>) -> C<T> {
    if w.norm_sqr() < T::lit(0.0625) {
        // ln|1-w| = 0.5 ln1p(-2 Re w + |w|^2)
        let re = T::lit(0.5) * (w.norm_sqr() - (w.re + w.re)).ln_1p();
        let im = (-w.im).atan2(T::one() - w.re);
        cplx(re, im)
    } else {
        (C::<T>::new(T::one(), T::zero()) - w).ln()
    }
}

/// Stable `ln(e^a + e^b)`.
#[inline]
pub(crate) fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Formats `sign * exp(log_abs)` in scientific notation without overflow.
pub fn format_log_scaled(sign: f64, log_abs: f64) -> String {
    if sign == 0.0 || log_abs == f64::NEG_INFINITY {
        return "0".to_string();
    }
    if !log_abs.is_finite() {
        return if sign < 0.0 { "-inf".into() } else { "inf".into() };
    }
    let l10 = log_abs / std::f64::consts::LN_10;
    if l10.abs() < 300.0 {
        return format!("{:.12e}", sign * log_abs.exp());
    }
    let mut e = l10.floor();
    let mut m = 10f64.powf(l10 - e);
    if m >= 10.0 {
        m /= 10.0;
        e += 1.0;
    }
    let s = if sign < 0.0 { "-" } else { "" };
    format!("{s}{m:.12}e{}", e as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_one_minus_small_and_large() {
        let w = cplx(1e-10, 2e-10);
        let l = ln_one_minus(w);
        assert!((l.re + 1e-10 - 1.5e-20).abs() < 1e-25);
        assert!((l.im + 2e-10 + 2e-20).abs() < 1e-25);
        let w = cplx(3.0, -1.0);
        let d = ln_one_minus(w) - (cplx(1.0, 0.0) - w).ln();
        assert!(d.norm() < 1e-15);
    }

    #[test]
    fn log_scaled_formatting() {
        assert_eq!(format_log_scaled(-1.0, (2.5f64).ln()), "-2.500000000000e0");
        let s = format_log_scaled(1.0, 1000.0 * std::f64::consts::LN_10 + (3.0f64).ln());
        let (m, e) = s.split_once('e').unwrap();
        assert!((m.parse::<f64>().unwrap() - 3.0).abs() < 1e-9 && e == "1000", "{s}");
        assert_eq!(format_log_scaled(1.0, f64::NEG_INFINITY), "0");
    }

    #[test]
    fn log_add_exp_matches_direct() {
        let v = log_add_exp(1.0f64, 2.0);
        assert!((v - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
    }
}
