//! The generating function `A(z) = v.p. prod (1 - z/t_n)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ln_abs_one_minus, ln_one_minus, real, Real, C};
use crate::special::{ln_cos, ln_gamma, ln_gamma_c, ln_sin};
use crate::spectra::{Family, Spectrum};
use crate::tails::{TailOrder, TailSums};

/// Closed forms known for particular families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ClosedForm<T> {
    /// `sin(pi sqrt z) / (pi sqrt z)`, zeros at `n^2`, `n >= 1`.
    Squares,
    /// `cos(pi c z)`.
    Livsic { c: T },
    /// `sin(pi z)/(pi z) * (1 - z/t0)`.
    Integers { t0: Option<T> },
    /// `Gamma(a)^2 / (Gamma(a + z) Gamma(a - z))`.
    ShiftedProgression { a: T },
}

impl<T: Real> ClosedForm<T> {
    /// Closed form matching a family, if one is known.
    pub fn for_family(f: &Family<T>) -> Option<Self> {
        match f {
            Family::Squares { n0: 1 } => Some(ClosedForm::Squares),
            Family::Livsic { c } => Some(ClosedForm::Livsic { c: *c }),
            Family::IntegersPunctured { t0 } => Some(ClosedForm::Integers { t0: *t0 }),
            Family::TwoSidedPower { gamma, t0 } if *gamma == T::one() => Some(ClosedForm::Integers { t0: *t0 }),
            Family::ShiftedProgression { a } => Some(ClosedForm::ShiftedProgression { a: *a }),
            _ => None,
        }
    }
}

/// Truncation policy for the numeric product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub order: TailOrder,
    /// Combine the odd tail moments of matching two-sided tails.
    pub pairing: bool,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy { order: TailOrder::First, pairing: true }
    }
}

impl TruncationPolicy {
    pub fn exact() -> Self {
        TruncationPolicy { order: TailOrder::Exact, pairing: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy<T> {
    NumericProduct,
    ClosedForm(ClosedForm<T>),
}

/// Bookkeeping attached to an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics<T> {
    pub closed_form: bool,
    pub materialized_terms: usize,
    pub buffer_terms: usize,
    pub series_terms: usize,
    pub tail_order: TailOrder,
    pub error_estimate: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation<V, T> {
    pub value: V,
    pub diagnostics: Diagnostics<T>,
}

/// Evaluator of the canonical product of a spectrum.
#[derive(Debug, Clone)]
pub struct GeneratingFunction<T> {
    spectrum: Arc<Spectrum<T>>,
    strategy: Strategy<T>,
    policy: TruncationPolicy,
    tails: TailSums<T>,
}

impl<T: Real> GeneratingFunction<T> {
    /// Numeric product with the given truncation policy.
    pub fn new(spectrum: Arc<Spectrum<T>>, policy: TruncationPolicy) -> Result<Self> {
        spectrum.validate()?;
        let tails = TailSums::for_product(&spectrum.tail, policy.pairing);
        // the first moment must exist (or pair) for the product to converge
        if !tails.is_empty() {
            tails.log_sum(real(T::lit(1e-3)), TailOrder::Second)?;
        }
        Ok(GeneratingFunction { spectrum, strategy: Strategy::NumericProduct, policy, tails })
    }

    /// Closed form for the spectrum's family.
    pub fn closed_form(spectrum: Arc<Spectrum<T>>) -> Result<Self> {
        let form = spectrum
            .family
            .as_ref()
            .and_then(ClosedForm::for_family)
            .ok_or_else(|| Error::ClosedForm(format!("no closed form for `{}`", spectrum.label)))?;
        Self::with_form(spectrum, form)
    }

    /// Explicit closed form. The caller asserts that it matches the spectrum.
    pub fn with_form(spectrum: Arc<Spectrum<T>>, form: ClosedForm<T>) -> Result<Self> {
        spectrum.validate()?;
        let tails = TailSums::for_product(&crate::spectra::Tail::None, true);
        Ok(GeneratingFunction { spectrum, strategy: Strategy::ClosedForm(form), policy: TruncationPolicy::exact(), tails })
    }

    pub fn spectrum(&self) -> &Arc<Spectrum<T>> {
        &self.spectrum
    }

    pub fn strategy(&self) -> Strategy<T> {
        self.strategy
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.policy
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.strategy, Strategy::ClosedForm(_))
    }

    /// `ln A(z)`; the real part is `ln|A(z)|`, the imaginary part is a branch.
    pub fn log_eval_with_diagnostics(&self, z: C<T>) -> Result<Evaluation<C<T>, T>> {
        match self.strategy {
            Strategy::ClosedForm(f) => Ok(Evaluation {
                value: closed_log(f, z),
                diagnostics: Diagnostics {
                    closed_form: true,
                    materialized_terms: 0,
                    buffer_terms: 0,
                    series_terms: 0,
                    tail_order: TailOrder::Exact,
                    error_estimate: T::lit(16.0) * T::epsilon(),
                },
            }),
            Strategy::NumericProduct => {
                let mut acc = C::new(T::zero(), T::zero());
                for t in &self.spectrum.points {
                    acc = acc + ln_one_minus(z / *t);
                }
                let tail = self.tails.log_sum(z, self.policy.order)?;
                let n = self.spectrum.len();
                Ok(Evaluation {
                    value: acc + tail.value,
                    diagnostics: Diagnostics {
                        closed_form: false,
                        materialized_terms: n,
                        buffer_terms: tail.buffer_terms,
                        series_terms: tail.series_terms,
                        tail_order: self.policy.order,
                        error_estimate: tail.error_estimate + T::epsilon() * T::idx(n).sqrt(),
                    },
                })
            }
        }
    }

    pub fn log_eval(&self, z: C<T>) -> Result<C<T>> {
        Ok(self.log_eval_with_diagnostics(z)?.value)
    }

    /// `A(z)` with diagnostics. Errors when `|A(z)|` overflows.
    pub fn eval_with_diagnostics(&self, z: C<T>) -> Result<Evaluation<C<T>, T>> {
        let e = self.log_eval_with_diagnostics(z)?;
        if e.value.re > T::ln_max() {
            return Err(Error::Overflow { re: z.re.as_f64(), im: z.im.as_f64() });
        }
        Ok(Evaluation { value: e.value.exp(), diagnostics: e.diagnostics })
    }

    pub fn eval(&self, z: C<T>) -> Result<C<T>> {
        Ok(self.eval_with_diagnostics(z)?.value)
    }

    /// `ln|A(z)|`, refusing points within `1e-12` (relative) of a node.
    pub fn log_abs_eval(&self, z: C<T>) -> Result<T> {
        let i = self.spectrum.nearest(z.re);
        let t = self.spectrum.points[i];
        let d = (z - t).norm();
        if d < T::lit(1e-12) * t.abs().max(T::one()) {
            return Err(Error::Proximity { re: z.re.as_f64(), im: z.im.as_f64(), node: t.as_f64(), distance: d.as_f64() });
        }
        Ok(self.log_eval(z)?.re)
    }

    fn check_collision(&self, i: usize) -> Result<()> {
        let p = &self.spectrum.points;
        let t = p[i];
        let tol = T::lit(1e-14) * t.abs().max(T::one());
        for j in [i.wrapping_sub(1), i + 1] {
            if let Some(&u) = p.get(j) {
                if (u - t).abs() < tol {
                    return Err(Error::Degenerate { left: t.min(u).as_f64(), right: t.max(u).as_f64() });
                }
            }
        }
        Ok(())
    }

    /// `(ln|A'(t_i)|, sign A'(t_i))` at the node in position `i`.
    pub fn log_abs_deriv_at_node(&self, i: usize) -> Result<(T, T)> {
        let p = &self.spectrum.points;
        if i >= p.len() {
            return Err(Error::param("n", format!("position {i} out of range")));
        }
        self.check_collision(i)?;
        let x = p[i];
        if let Strategy::ClosedForm(f) = self.strategy {
            return closed_deriv(f, x);
        }
        let mut log = -x.abs().ln();
        let mut sign = -x.signum();
        for (j, t) in p.iter().enumerate() {
            if j != i {
                let (l, s) = ln_abs_one_minus(x / *t);
                log += l;
                sign *= s;
            }
        }
        log += self.tails.log_sum_real(x, self.policy.order)?;
        Ok((log, sign))
    }

    /// `A'(t_i)`. Errors when the value overflows.
    pub fn deriv_at_node(&self, i: usize) -> Result<T> {
        let (l, s) = self.log_abs_deriv_at_node(i)?;
        if l > T::ln_max() {
            let x = self.spectrum.points[i];
            return Err(Error::Overflow { re: x.as_f64(), im: 0.0 });
        }
        Ok(s * l.exp())
    }
}

fn closed_log<T: Real>(f: ClosedForm<T>, z: C<T>) -> C<T> {
    let pi = T::PI();
    let small = T::lit(1e-4);
    match f {
        ClosedForm::Squares => {
            let w = z.sqrt() * pi;
            if w.norm() < small {
                // sin(w)/w = 1 - w^2/6 + w^4/120
                let w2 = w * w;
                ln_one_minus(w2 / T::lit(6.0) - w2 * w2 / T::lit(120.0))
            } else {
                ln_sin(w) - w.ln()
            }
        }
        ClosedForm::Livsic { c } => ln_cos(z * (pi * c)),
        ClosedForm::Integers { t0 } => {
            let w = z * pi;
            let base = if w.norm() < small {
                let w2 = w * w;
                ln_one_minus(w2 / T::lit(6.0) - w2 * w2 / T::lit(120.0))
            } else {
                ln_sin(w) - w.ln()
            };
            match t0 {
                Some(t) => base + ln_one_minus(z / t),
                None => base,
            }
        }
        ClosedForm::ShiftedProgression { a } => {
            real::<T>(ln_gamma(a) * T::lit(2.0)) - ln_gamma_c(z + a) - ln_gamma_c(real::<T>(a) - z)
        }
    }
}

fn parity<T: Real>(k: T) -> T {
    if (k * T::lit(0.5)).fract() == T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

fn closed_deriv<T: Real>(f: ClosedForm<T>, x: T) -> Result<(T, T)> {
    let near_int = |v: T| {
        let r = v.round();
        ((v - r).abs() <= T::lit(1e-9) * v.abs().max(T::one())).then_some(r)
    };
    let miss = || Error::ClosedForm(format!("{x} is not a zero of the closed form"));
    match f {
        ClosedForm::Squares => {
            let n = near_int(x.sqrt()).filter(|_| x > T::zero()).ok_or_else(miss)?;
            Ok((-(T::lit(2.0) * n * n).ln(), parity(n)))
        }
        ClosedForm::Livsic { c } => {
            let d = -T::PI() * c * (T::PI() * c * x).sin();
            Ok((d.abs().ln(), d.signum()))
        }
        ClosedForm::Integers { t0 } => {
            if let Some(t) = t0 {
                if (x - t).abs() <= T::lit(1e-14) * t.abs().max(T::one()) {
                    let d = -(T::PI() * t).sin() / (T::PI() * t * t);
                    return Ok((d.abs().ln(), d.signum()));
                }
            }
            let n = near_int(x).filter(|n| *n != T::zero()).ok_or_else(miss)?;
            let mut d = parity(n) / n;
            if let Some(t) = t0 {
                d = d * (T::one() - n / t);
            }
            Ok((d.abs().ln(), d.signum()))
        }
        ClosedForm::ShiftedProgression { a } => {
            let k = near_int(x.abs() - a).filter(|k| *k >= T::zero()).ok_or_else(miss)?;
            // A'(a + k) = (-1)^{k+1} Gamma(a)^2 k! / Gamma(k + 2a), A odd-symmetric derivative
            let log = T::lit(2.0) * ln_gamma(a) + ln_gamma(k + T::one()) - ln_gamma(k + a + a);
            let sign = -parity(k) * x.signum();
            Ok((log, sign))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{generate, FamilySpec};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn spec(f: Family<f64>, n: usize) -> Arc<Spectrum<f64>> {
        Arc::new(generate(&FamilySpec::new(f, n)).unwrap())
    }

    fn numeric(s: &Arc<Spectrum<f64>>) -> GeneratingFunction<f64> {
        GeneratingFunction::new(s.clone(), TruncationPolicy::exact()).unwrap()
    }

    #[test]
    fn squares_numeric_matches_sine_oracle() {
        let s = spec(Family::Squares { n0: 1 }, 400);
        let g = numeric(&s);
        for z in [Complex64::new(2.5, 0.0), Complex64::new(-30.0, 4.0), Complex64::new(1000.0, 17.0), Complex64::new(0.0, 250.0)] {
            let w = z.sqrt() * std::f64::consts::PI;
            let oracle = w.sin() / w;
            let v = g.eval(z).unwrap();
            assert!((v - oracle).norm() <= 1e-10 * oracle.norm(), "{z}: {v} vs {oracle}");
        }
        assert_relative_eq!(g.eval(Complex64::new(0.0, 0.0)).unwrap().re, 1.0);
    }

    #[test]
    fn squares_derivative_signs() {
        let s = spec(Family::Squares { n0: 1 }, 200);
        let g = numeric(&s);
        assert_relative_eq!(g.deriv_at_node(0).unwrap(), -0.5, max_relative = 1e-12);
        assert_relative_eq!(g.deriv_at_node(1).unwrap(), 0.125, max_relative = 1e-12);
        for i in [9usize, 99, 199] {
            let n = (i + 1) as f64;
            let oracle = if (i + 1) % 2 == 0 { 1.0 } else { -1.0 } / (2.0 * n * n);
            assert_relative_eq!(g.deriv_at_node(i).unwrap(), oracle, max_relative = 1e-10);
        }
        let c = GeneratingFunction::closed_form(s).unwrap();
        assert_relative_eq!(c.deriv_at_node(1).unwrap(), 0.125, max_relative = 1e-14);
    }

    #[test]
    fn livsic_numeric_matches_cosine() {
        let s = spec(Family::Livsic { c: 1.0 }, 300);
        let g = numeric(&s);
        for z in [Complex64::new(0.3, 0.0), Complex64::new(12.2, -3.0), Complex64::new(-250.0, 1.0)] {
            let oracle = (z * std::f64::consts::PI).cos();
            let v = g.eval(z).unwrap();
            assert!((v - oracle).norm() <= 1e-10 * oracle.norm(), "{z}: {v} vs {oracle}");
        }
        let d = g.deriv_at_node(s.position_of(0.5).unwrap()).unwrap();
        assert_relative_eq!(d.abs(), std::f64::consts::PI, max_relative = 1e-10);
    }

    #[test]
    fn integers_punctured_examples() {
        let s = spec(Family::IntegersPunctured { t0: None }, 300);
        let g = numeric(&s);
        let i1 = s.position_of(1.0).unwrap();
        assert_relative_eq!(g.deriv_at_node(i1).unwrap(), -1.0, max_relative = 1e-10);
        let z = Complex64::new(0.37, 0.0);
        let oracle = (z * std::f64::consts::PI).sin() / (z * std::f64::consts::PI);
        assert!((g.eval(z).unwrap() - oracle).norm() < 1e-12);
    }

    #[test]
    fn shifted_progression_against_gamma_oracle() {
        use statrs::function::gamma::gamma;
        for a in [0.5, 1.5, 2.25] {
            let s = spec(Family::ShiftedProgression { a }, 300);
            let g = numeric(&s);
            let c = GeneratingFunction::closed_form(s.clone()).unwrap();
            for x in [0.2, 1.1, 3.7] {
                let oracle = gamma(a).powi(2) / (gamma(a + x) * gamma(a - x));
                let v = g.eval(Complex64::new(x, 0.0)).unwrap().re;
                assert_relative_eq!(v, oracle, max_relative = 1e-9);
                assert_relative_eq!(c.eval(Complex64::new(x, 0.0)).unwrap().re, oracle, max_relative = 1e-11);
            }
            for k in [0usize, 3, 40] {
                let i = s.position_of(a + k as f64).unwrap();
                let (ln, sn) = g.log_abs_deriv_at_node(i).unwrap();
                let (lc, sc) = c.log_abs_deriv_at_node(i).unwrap();
                assert_eq!(sn, sc);
                assert!((ln - lc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zeros_and_conjugate_symmetry() {
        let s = spec(Family::TwoSidedPower { gamma: 1.5, t0: Some(0.5) }, 200);
        let g = numeric(&s);
        let t = s.points[s.len() / 3];
        assert_eq!(g.eval(Complex64::new(t, 0.0)).unwrap().norm(), 0.0);
        let z = Complex64::new(3.3, 1.7);
        let a = g.eval(z).unwrap();
        let b = g.eval(z.conj()).unwrap();
        assert!((a - b.conj()).norm() <= 1e-14 * a.norm());
        assert!(matches!(g.log_abs_eval(Complex64::new(t, 0.0)), Err(Error::Proximity { .. })));
    }

    #[test]
    fn overflow_is_reported() {
        let s = spec(Family::OneSidedPower { gamma: 3.0 }, 500);
        let g = numeric(&s);
        let last = s.len() - 1;
        assert!(matches!(g.deriv_at_node(last), Err(Error::Overflow { .. })));
        assert!(g.log_abs_deriv_at_node(last).unwrap().0 > 700.0);
    }

    #[test]
    fn one_sided_linear_growth_is_rejected() {
        let s = spec(Family::OneSidedPower { gamma: 1.0 }, 50);
        assert!(matches!(GeneratingFunction::new(s, TruncationPolicy::default()), Err(Error::Divergent(_))));
    }

    #[test]
    fn degenerate_pair_detected() {
        let s = Arc::new(Spectrum::from_points(vec![1.0, 1.0 + 1e-15, 4.0], crate::spectra::Tail::None, "t").unwrap());
        let g = GeneratingFunction::new(s, TruncationPolicy::default()).unwrap();
        assert!(matches!(g.deriv_at_node(0), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn first_order_error_estimate_brackets_truth() {
        let s = spec(Family::Squares { n0: 1 }, 200);
        let first = GeneratingFunction::new(s.clone(), TruncationPolicy::default()).unwrap();
        let exact = numeric(&s);
        let z = Complex64::new(50.0, 5.0);
        let e = first.log_eval_with_diagnostics(z).unwrap();
        let truth = exact.log_eval(z).unwrap();
        assert!((e.value - truth).norm() <= 2.0 * e.diagnostics.error_estimate);
    }

    #[test]
    fn f32_product_is_usable() {
        let s = Arc::new(generate(&FamilySpec::new(Family::<f32>::Squares { n0: 1 }, 100)).unwrap());
        let g = GeneratingFunction::new(s, TruncationPolicy::exact()).unwrap();
        let d = g.deriv_at_node(1).unwrap();
        assert!((d - 0.125).abs() < 1e-4);
    }
}
