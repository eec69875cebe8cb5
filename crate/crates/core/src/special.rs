//! Special functions used by the tail sums and the closed forms.

use crate::scalar::{cplx, real, Real, C};

/// B_{2j} / (2j)! for j = 1..=10.
const BERN_OVER_FACT: [f64; 10] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
    43867.0 / 5109094217170944000.0,
    -174611.0 / 802857662698291200000.0,
];

/// `a^s * zeta(s, a)`, the Hurwitz zeta normalized by its first term.
///
/// Valid for `a > 0` and any real `s != 1`; for `s <= 1` this is the analytic
/// continuation, which is only meaningful inside differences.
pub fn hurwitz_scaled<T: Real>(s: T, a: T) -> T {
    debug_assert!(a > T::zero());
    let floor = T::lit(2.0) * s.abs() + T::lit(24.0);
    let k = if a >= floor { 0 } else { (floor - a).ceil().to_usize().unwrap_or(0) };
    let mut acc = T::zero();
    for i in 0..k {
        acc += (T::one() + T::idx(i) / a).powf(-s);
    }
    let b = a + T::idx(k);
    let rs = (b / a).powf(-s);
    acc += b * rs / (s - T::one());
    acc += T::lit(0.5) * rs;
    // rising factorial s (s+1) ... (s+2j-2) times b^{-(2j-1)}
    let mut rising = s / b;
    let b2 = b * b;
    for (j, c) in BERN_OVER_FACT.iter().enumerate() {
        if j > 0 {
            let m = T::idx(2 * j);
            rising = rising * (s + m - T::one()) * (s + m) / b2;
        }
        let term = T::lit(*c) * rising * rs;
        acc += term;
        if term.abs() <= T::epsilon() * acc.abs() * T::lit(1e-2) {
            break;
        }
    }
    acc
}

/// Hurwitz zeta `zeta(s, a)` (analytic continuation for `s < 1`).
pub fn hurwitz_zeta<T: Real>(s: T, a: T) -> T {
    a.powf(-s) * hurwitz_scaled(s, a)
}

/// Digamma for positive arguments.
pub fn digamma<T: Real>(x: T) -> T {
    debug_assert!(x > T::zero());
    let mut x = x;
    let mut acc = T::zero();
    while x < T::lit(12.0) {
        acc -= T::one() / x;
        x += T::one();
    }
    let inv = T::one() / x;
    let inv2 = inv * inv;
    // asymptotic series ln x - 1/(2x) - sum B_{2k}/(2k x^{2k})
    let series = inv2
        * (T::lit(1.0 / 12.0)
            - inv2 * (T::lit(1.0 / 120.0) - inv2 * (T::lit(1.0 / 252.0) - inv2 * (T::lit(1.0 / 240.0) - inv2 * T::lit(1.0 / 132.0)))));
    acc + x.ln() - T::lit(0.5) * inv - series
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(z)` for complex `z`. The imaginary part is defined up to `2 pi`.
pub fn ln_gamma_c<T: Real>(z: C<T>) -> C<T> {
    let half = T::lit(0.5);
    if z.re < half {
        // reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z)
        let pz = z * T::PI();
        return real(T::PI().ln()) - ln_sin(pz) - ln_gamma_c(real(T::one()) - z);
    }
    let z = z - T::one();
    let mut x = real::<T>(T::lit(LANCZOS[0]));
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        x = x + real::<T>(T::lit(*c)) / (z + T::idx(i));
    }
    let t = z + T::lit(LANCZOS_G) + half;
    real::<T>(half * (T::TAU()).ln()) + (z + half) * t.ln() - t + x.ln()
}

/// `ln Gamma(x)` for real `x > 0`.
pub fn ln_gamma<T: Real>(x: T) -> T {
    ln_gamma_c(real(x)).re
}

/// Principal-ish `ln sin(z)`, free of overflow for large `|Im z|`.
pub fn ln_sin<T: Real>(z: C<T>) -> C<T> {
    let y = z.im;
    if y.abs() < T::lit(20.0) {
        return z.sin().ln();
    }
    // sin z = (e^{iz} - e^{-iz}) / 2i
    let i = cplx(T::zero(), T::one());
    if y > T::zero() {
        // dominant e^{-iz}; sin z = -e^{-iz}(1 - e^{2iz}) / 2i = i/2 e^{-iz} (1 - e^{2iz})
        let e2 = (i * z * T::lit(2.0)).exp();
        real::<T>(-T::LN_2()) + i * T::FRAC_PI_2() - i * z + (real::<T>(T::one()) - e2).ln()
    } else {
        let e2 = (-i * z * T::lit(2.0)).exp();
        real::<T>(-T::LN_2()) - i * T::FRAC_PI_2() + i * z + (real::<T>(T::one()) - e2).ln()
    }
}

/// `ln cos(z)`, free of overflow for large `|Im z|`.
pub fn ln_cos<T: Real>(z: C<T>) -> C<T> {
    ln_sin(z + T::FRAC_PI_2())
}
