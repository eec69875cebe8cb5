//! Sums over the unmaterialized tail of a spectrum.
//!
//! Two kernels are supported, both expanded in powers of `z / t`:
//! the logarithmic kernel `ln(1 - z/t)` of the canonical product and the
//! resolvent kernel `w (1/(t - z) - 1/t)` of the Herglotz sums. The moments
//! `sum w(m) t(m)^{-q}` are Hurwitz zeta values; for two-sided tails with
//! matching laws the odd moments are paired, which is the principal-value
//! regularization of the product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ln_abs_one_minus, ln_one_minus, real, Real, C};
use crate::special::{digamma, hurwitz_scaled, hurwitz_zeta};
use crate::spectra::{Side, SideLaw, Tail};

/// How much of the tail correction to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailOrder {
    /// Materialized points only.
    None,
    /// First-order correction `-z S_1`.
    #[default]
    First,
    /// Through `-z^2 S_2 / 2`.
    Second,
    /// Direct buffer up to `|t| >= 2|z|`, then the full moment series.
    Exact,
}

/// Weight law `w(m) = coeff * (m + shift)^power`, sharing the side law's shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightLaw<T> {
    pub coeff: C<T>,
    pub power: T,
}

impl<T: Real> WeightLaw<T> {
    pub fn unit() -> Self {
        WeightLaw { coeff: real(T::one()), power: T::zero() }
    }

    pub fn constant(coeff: C<T>) -> Self {
        WeightLaw { coeff, power: T::zero() }
    }

    fn at(&self, law: &SideLaw<T>, m: u64) -> C<T> {
        if self.power == T::zero() {
            self.coeff
        } else {
            self.coeff * (T::from_u64(m).unwrap() + law.shift).powf(self.power)
        }
    }
}

#[derive(Debug, Clone)]
struct SideTail<T> {
    sign: T,
    law: SideLaw<T>,
    weight: WeightLaw<T>,
}

/// Outcome of a tail evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEval<T> {
    pub value: C<T>,
    pub buffer_terms: usize,
    pub series_terms: usize,
    pub error_estimate: T,
}

#[derive(Clone, Copy, PartialEq)]
enum Kernel {
    Log,
    Resolvent,
}

const BUFFER_CAP: u64 = 20_000_000;

/// Tail sums for one spectrum and one weight assignment.
#[derive(Debug, Clone)]
pub struct TailSums<T> {
    sides: Vec<SideTail<T>>,
    paired: bool,
}

impl<T: Real> TailSums<T> {
    /// Unit weights on every side that has a law (canonical product).
    pub fn for_product(tail: &Tail<T>, pairing: bool) -> Self {
        let w = Some(WeightLaw::unit());
        Self::with_weights(tail, w, w, pairing)
    }

    /// Weighted sums; sides with no weight law are omitted.
    pub fn with_weights(tail: &Tail<T>, negative: Option<WeightLaw<T>>, positive: Option<WeightLaw<T>>, pairing: bool) -> Self {
        let mut sides = Vec::new();
        for (side, w) in [(Side::Negative, negative), (Side::Positive, positive)] {
            if let (Some(law), Some(weight)) = (tail.law(side), w) {
                sides.push(SideTail { sign: side.sign(), law, weight });
            }
        }
        let paired = pairing && sides.len() == 2 && {
            let (a, b) = (&sides[0], &sides[1]);
            let close = |x: T, y: T| (x - y).abs() <= T::lit(1e-12) * x.abs().max(y.abs());
            close(a.law.scale, b.law.scale)
                && a.law.growth == b.law.growth
                && a.weight.power == b.weight.power
                && (a.weight.coeff - b.weight.coeff).norm() <= T::lit(1e-12) * a.weight.coeff.norm()
        };
        TailSums { sides, paired }
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }

    /// Whether the odd moments of the two sides are combined.
    pub fn is_paired(&self) -> bool {
        self.paired
    }

    fn starts(&self, zabs: T, order: TailOrder) -> Result<Vec<u64>> {
        let mut st: Vec<u64> = self
            .sides
            .iter()
            .map(|s| if order == TailOrder::Exact { s.law.first_index_beyond(zabs + zabs) } else { s.law.next })
            .collect();
        if self.paired {
            let m = st[0].max(st[1]);
            st = vec![m, m];
        }
        for (s, m) in self.sides.iter().zip(&st) {
            if m - s.law.next > BUFFER_CAP {
                return Err(Error::Resolution(format!("|z| = {zabs} needs more than {BUFFER_CAP} virtual tail points")));
            }
        }
        Ok(st)
    }

    /// Coefficient of `z^j` in the expansion, over all sides.
    fn series_term(&self, kernel: Kernel, z: C<T>, j: usize, starts: &[u64]) -> Result<C<T>> {
        let q = match kernel {
            Kernel::Log => j,
            Kernel::Resolvent => j + 1,
        };
        let coef = match kernel {
            Kernel::Log => -T::one() / T::idx(j),
            Kernel::Resolvent => T::one(),
        };
        let qf = T::idx(q);
        let mut acc = C::new(T::zero(), T::zero());
        let mut handled_pair = false;
        for (k, s) in self.sides.iter().enumerate() {
            let e = qf * s.law.growth - s.weight.power;
            if e > T::one() + T::lit(1e-12) {
                let a = T::from_u64(starts[k]).unwrap() + s.law.shift;
                let tm = s.law.magnitude(starts[k]);
                let u = z * (s.sign / tm);
                let mut c = u.powi(j as i32) * (coef * a.powf(s.weight.power) * hurwitz_scaled(e, a));
                if kernel == Kernel::Resolvent {
                    c = c * (s.sign / tm);
                }
                acc = acc + c * s.weight.coeff;
                continue;
            }
            if !(self.paired && q % 2 == 1) {
                return Err(Error::Divergent(format!(
                    "moment of order {q} on the {} side has exponent {} <= 1",
                    if s.sign > T::zero() { "positive" } else { "negative" },
                    e.as_f64()
                )));
            }
            if handled_pair {
                continue;
            }
            handled_pair = true;
            let (neg, pos) = (&self.sides[0], &self.sides[1]);
            let a_neg = T::from_u64(starts[0]).unwrap() + neg.law.shift;
            let a_pos = T::from_u64(starts[1]).unwrap() + pos.law.shift;
            let diff = if (e - T::one()).abs() <= T::lit(1e-12) {
                digamma(a_neg) - digamma(a_pos)
            } else {
                hurwitz_zeta(e, a_pos) - hurwitz_zeta(e, a_neg)
            };
            let scale = pos.law.scale.powi(-(q as i32));
            acc = acc + z.powi(j as i32) * pos.weight.coeff * (coef * scale * diff);
        }
        Ok(acc)
    }

    fn run(&self, kernel: Kernel, z: C<T>, order: TailOrder) -> Result<TailEval<T>> {
        let zero = C::new(T::zero(), T::zero());
        if self.sides.is_empty() {
            return Ok(TailEval { value: zero, buffer_terms: 0, series_terms: 0, error_estimate: T::zero() });
        }
        let zabs = z.norm();
        let starts = self.starts(zabs, order)?;
        let mut value = zero;
        let mut buffer = 0usize;
        for (s, &m_end) in self.sides.iter().zip(&starts) {
            for m in s.law.next..m_end {
                let t = s.sign * s.law.magnitude(m);
                value = value
                    + match kernel {
                        Kernel::Log => ln_one_minus(z / t),
                        Kernel::Resolvent => s.weight.at(&s.law, m) * z / ((real::<T>(t) - z) * t),
                    };
                buffer += 1;
            }
        }
        if zabs == T::zero() {
            return Ok(TailEval { value, buffer_terms: buffer, series_terms: 0, error_estimate: T::zero() });
        }
        let ratio = self
            .sides
            .iter()
            .zip(&starts)
            .map(|(s, &m)| zabs / s.law.magnitude(m))
            .fold(T::zero(), |a, b| a.max(b));
        let jmax = match order {
            TailOrder::None => 0,
            TailOrder::First => 1,
            TailOrder::Second => 2,
            TailOrder::Exact => 600,
        };
        let mut series = zero;
        let mut used = 0;
        let mut small = 0;
        let mut est = T::zero();
        for j in 1..=jmax + 1 {
            let term = self.series_term(kernel, z, j, &starts)?;
            if j > jmax {
                est = if ratio >= T::one() { T::infinity() } else { term.norm() / (T::one() - ratio) };
                break;
            }
            series = series + term;
            used = j;
            if order == TailOrder::Exact {
                let mag = (value + series).norm();
                if term.norm() <= T::epsilon() * mag || term.norm() == T::zero() && mag == T::zero() {
                    small += 1;
                    if small >= 2 {
                        break;
                    }
                } else {
                    small = 0;
                }
            }
        }
        let value = value + series;
        if order == TailOrder::Exact {
            est = T::epsilon() * (value.norm() + T::one()) * T::idx(buffer + used + 1).sqrt();
        }
        Ok(TailEval { value, buffer_terms: buffer, series_terms: used, error_estimate: est })
    }

    /// `sum ln(1 - z/t)` over the tail.
    pub fn log_sum(&self, z: C<T>, order: TailOrder) -> Result<TailEval<T>> {
        self.run(Kernel::Log, z, order)
    }

    /// `sum ln|1 - x/t|` over the tail for real `x`.
    pub fn log_sum_real(&self, x: T, order: TailOrder) -> Result<T> {
        if self.sides.is_empty() {
            return Ok(T::zero());
        }
        let starts = self.starts(x.abs(), order)?;
        let mut v = T::zero();
        for (s, &m_end) in self.sides.iter().zip(&starts) {
            for m in s.law.next..m_end {
                v += ln_abs_one_minus(x / (s.sign * s.law.magnitude(m))).0;
            }
        }
        if x == T::zero() {
            return Ok(v);
        }
        // reuse the series with the buffer already counted
        let probe = TailSums { sides: self.sides.clone(), paired: self.paired };
        let jmax = match order {
            TailOrder::None => 0,
            TailOrder::First => 1,
            TailOrder::Second => 2,
            TailOrder::Exact => 600,
        };
        let z = real(x);
        let mut series = T::zero();
        let mut small = 0;
        for j in 1..=jmax {
            let term = probe.series_term(Kernel::Log, z, j, &starts)?.re;
            series += term;
            if order == TailOrder::Exact {
                if term.abs() <= T::epsilon() * (v + series).abs() || term == T::zero() {
                    small += 1;
                    if small >= 2 {
                        break;
                    }
                } else {
                    small = 0;
                }
            }
        }
        Ok(v + series)
    }

    /// `sum w (1/(t - z) - 1/t)` over the tail.
    pub fn resolvent_sum(&self, z: C<T>, order: TailOrder) -> Result<TailEval<T>> {
        self.run(Kernel::Resolvent, z, order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use crate::spectra::TailSide;

    fn law(scale: f64, growth: f64, shift: f64, next: u64) -> SideLaw<f64> {
        SideLaw { scale, growth, shift, next }
    }

    /// Brute-force tail sum, truncated far out with an integral remainder bound ignored.
    fn brute_log(l: &SideLaw<f64>, sign: f64, z: C<f64>, upto: u64) -> C<f64> {
        (l.next..upto).map(|m| (cplx(1.0, 0.0) - z / (sign * l.magnitude(m))).ln()).sum()
    }

    #[test]
    fn squares_tail_matches_brute_force() {
        let l = law(1.0, 2.0, 0.0, 11);
        let tail = Tail::Power { side: TailSide::Positive, law: l };
        let sums = TailSums::for_product(&tail, true);
        for z in [cplx(3.0, 1.0), cplx(250.0, -40.0), cplx(-900.0, 0.0)] {
            let exact = sums.log_sum(z, TailOrder::Exact).unwrap().value;
            // brute force plus the leading remainder -z * sum_{m>=M} m^-2 ~ -z/M
            let m = 2_000_000u64;
            let brute = brute_log(&l, 1.0, z, m) - z / (m as f64 - 0.5);
            assert!((exact - brute).norm() < 1e-9, "{z}: {exact} vs {brute}");
        }
    }

    #[test]
    fn first_order_is_leading_term() {
        let l = law(1.0, 2.0, 0.0, 101);
        let tail = Tail::Power { side: TailSide::Positive, law: l };
        let sums = TailSums::for_product(&tail, true);
        let z = cplx(0.5, 0.25);
        let s1: f64 = (101..5_000_000u64).map(|m| 1.0 / (m as f64 * m as f64)).sum::<f64>() + 1.0 / 4_999_999.5;
        let first = sums.log_sum(z, TailOrder::First).unwrap();
        assert!((first.value + z * s1).norm() < 1e-12);
        let exact = sums.log_sum(z, TailOrder::Exact).unwrap();
        assert!((exact.value - first.value).norm() <= 2.0 * first.error_estimate);
    }

    #[test]
    fn paired_integers_tail() {
        // sum over |m| > N of ln(1 - z/m), paired: ln prod (1 - z^2/m^2)
        let l = law(1.0, 1.0, 0.0, 51);
        let tail = Tail::Power { side: TailSide::Both, law: l };
        let sums = TailSums::for_product(&tail, true);
        assert!(sums.is_paired());
        let z = cplx(7.3, 2.0);
        let exact = sums.log_sum(z, TailOrder::Exact).unwrap().value;
        let brute: C<f64> = (51..3_000_000u64).map(|m| (cplx(1.0, 0.0) - z * z / (m as f64 * m as f64)).ln()).sum::<C<f64>>()
            - z * z / 2_999_999.5;
        assert!((exact - brute).norm() < 1e-9);
        let unpaired = TailSums::for_product(&tail, false);
        assert!(matches!(unpaired.log_sum(z, TailOrder::Exact), Err(Error::Divergent(_))));
    }

    #[test]
    fn shifted_sides_pair_through_zeta_difference() {
        // arithmetic tail with offset: points m + 0.25 (m >= 40) and -(m - 0.25)
        let tail = Tail::Arithmetic { c: 1.0, offset: 0.25, next_minus: 40, next_plus: 40 };
        let sums = TailSums::for_product(&tail, true);
        let z = cplx(3.0, -1.0);
        let exact = sums.log_sum(z, TailOrder::Exact).unwrap().value;
        let brute: C<f64> = (40..2_000_000u64)
            .map(|m| {
                let (p, n) = (m as f64 + 0.25, -(m as f64 - 0.25));
                (cplx(1.0, 0.0) - z / p).ln() + (cplx(1.0, 0.0) - z / n).ln()
            })
            .sum();
        // remainder: -z sum(1/p + 1/n) ~ z * 0.5 / M, and -z^2 sum 1/m^2 / 2 ~ -z^2 / (2M)
        let m = 2_000_000.0;
        let brute = brute + z * 0.5 / m - z * z / m;
        assert!((exact - brute).norm() < 1e-8, "{exact} vs {brute}");
    }

    #[test]
    fn resolvent_constant_weights() {
        // w = 1 on (m + 1/2), both sides: sum 2z^2/(t (t^2 - z^2)) over t >= N + 1/2
        let tail = Tail::Power { side: TailSide::Both, law: law(1.0, 1.0, 0.5, 30) };
        let w = Some(WeightLaw::constant(cplx(1.0, 0.0)));
        let sums = TailSums::with_weights(&tail, w, w, true);
        let z = cplx(2.0, 5.0);
        let v = sums.resolvent_sum(z, TailOrder::Exact).unwrap().value;
        let brute: C<f64> = (30..4_000_000u64)
            .map(|m| {
                let t = m as f64 + 0.5;
                z * 2.0 / (cplx(t * t, 0.0) - z * z)
            })
            .sum::<C<f64>>()
            + z * 2.0 / 4_000_000.0;
        assert!((v - brute).norm() < 1e-11, "{v} vs {brute}");
    }

    #[test]
    fn real_path_agrees_with_complex() {
        let tail = Tail::Power { side: TailSide::Positive, law: law(1.0, 2.0, 0.0, 21) };
        let sums = TailSums::for_product(&tail, true);
        for x in [-50.0, 3.7, 399.0] {
            let c = sums.log_sum(cplx(x, 0.0), TailOrder::Exact).unwrap().value;
            let r = sums.log_sum_real(x, TailOrder::Exact).unwrap();
            assert!((c.re - r).abs() < 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn one_sided_linear_tail_diverges() {
        let tail = Tail::Power { side: TailSide::Positive, law: law(1.0, 1.0, 0.0, 5) };
        let sums = TailSums::for_product(&tail, true);
        assert!(matches!(sums.log_sum(cplx(1.0, 0.0), TailOrder::First), Err(Error::Divergent(_))));
    }
}
