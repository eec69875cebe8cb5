//! Rank-one perturbation data and its synthesis from a removable spectrum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::canonical_product::GeneratingFunction;
use crate::error::{Error, Result};
use crate::krein_diag::{self, KreinTerm, Verdict};
use crate::scalar::{cplx, real, Real, C};
use crate::spectra::{Spectrum, Tail};
use crate::tails::WeightLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassPolicy {
    /// `mu_n = 1`, `a_n = sqrt|c_n|`, `b_n = conj(c_n)/sqrt|c_n|`.
    Unit,
    /// `mu_n = |c_n|`, `a_n = 1`, `b_n = conj(c_n)/|c_n|`.
    AbsC,
}

/// Whether synthesis may proceed on a spectrum not judged removable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    RequireRemovable,
    Force,
}

/// Weight laws continuing `w = |b|^2 mu` and `c = a conj(b) mu` beyond the materialized nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailWeights<T> {
    pub w_minus: Option<WeightLaw<T>>,
    pub w_plus: Option<WeightLaw<T>>,
    pub c_minus: Option<WeightLaw<T>>,
    pub c_plus: Option<WeightLaw<T>>,
}

impl<T: Real> TailWeights<T> {
    /// Constant `mu`, `a`, `b` on both sides.
    pub fn constant(mu: T, a: C<T>, b: C<T>) -> Self {
        let w = Some(WeightLaw::constant(real(b.norm_sqr() * mu)));
        let c = Some(WeightLaw::constant(a * b.conj() * mu));
        TailWeights { w_minus: w, w_plus: w, c_minus: c, c_plus: c }
    }
}

/// Record of the rescaling step of smooth synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleInfo<T> {
    /// `polynomial` (odd positions scaled by `j^s`, even by `j^-s`) or `floor`.
    pub rule: String,
    pub exponent: Option<T>,
    pub a_divergent: bool,
    pub b_divergent: bool,
    pub a_weighted_convergent: bool,
    pub b_weighted_convergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothInfo<T> {
    pub alpha1: T,
    pub alpha2: T,
    pub gamma: T,
    pub rescale: Option<RescaleInfo<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Flags<T> {
    pub synthesized: bool,
    pub forced: bool,
    pub mass_policy: Option<MassPolicy>,
    pub smooth: Option<SmoothInfo<T>>,
    /// Positions where `c_n` underflowed and the vectors were zeroed.
    pub underflow: Vec<usize>,
}

/// Perturbation data `(mu, a, b, delta)` on a spectrum; `c = a conj(b) mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PerturbationData<T> {
    pub spectrum: Arc<Spectrum<T>>,
    pub mu: Vec<T>,
    pub a: Vec<C<T>>,
    pub b: Vec<C<T>>,
    pub delta: T,
    pub c: Vec<C<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_weights: Option<TailWeights<T>>,
    #[serde(default)]
    pub flags: Flags<T>,
}

impl<T: Real> PerturbationData<T> {
    pub fn new(spectrum: Arc<Spectrum<T>>, mu: Vec<T>, a: Vec<C<T>>, b: Vec<C<T>>, delta: T) -> Result<Self> {
        let n = spectrum.len();
        if mu.len() != n || a.len() != n || b.len() != n {
            return Err(Error::param("mu/a/b", format!("lengths must equal the {n} nodes")));
        }
        if mu.iter().any(|m| !(*m > T::zero() && m.is_finite())) {
            return Err(Error::param("mu", "masses must be positive and finite"));
        }
        if !(delta != T::zero() && delta.is_finite()) {
            return Err(Error::param("delta", "must be nonzero and finite"));
        }
        let c = a.iter().zip(&b).zip(&mu).map(|((a, b), m)| *a * b.conj() * *m).collect();
        Ok(PerturbationData { spectrum, mu, a, b, delta, c, tail_weights: None, flags: Flags::default() })
    }

    /// Re-checks invariants after deserialization and recomputes `c`.
    pub fn validate(&mut self) -> Result<()> {
        self.spectrum.validate()?;
        let fresh = Self::new(self.spectrum.clone(), self.mu.clone(), self.a.clone(), self.b.clone(), self.delta)?;
        self.c = fresh.c;
        Ok(())
    }

    pub fn with_tail_weights(mut self, t: TailWeights<T>) -> Self {
        self.tail_weights = Some(t);
        self
    }

    /// `w_n = |b_n|^2 mu_n`.
    pub fn w(&self) -> Vec<T> {
        self.b.iter().zip(&self.mu).map(|(b, m)| b.norm_sqr() * *m).collect()
    }

    /// Livsic pattern `mu = 1`, `b = sqrt(w)`, `a = i b`, `delta = -1`, with constant tail weights.
    pub fn livsic_pattern(spectrum: Arc<Spectrum<T>>, w: T) -> Result<Self> {
        let n = spectrum.len();
        let b = real(w.sqrt());
        let a = cplx(T::zero(), w.sqrt());
        let tw = (!spectrum.tail.is_none()).then(|| TailWeights::constant(T::one(), a, b));
        let mut d = Self::new(spectrum, vec![T::one(); n], vec![a; n], vec![b; n], -T::one())?;
        d.tail_weights = tw;
        Ok(d)
    }

    /// Data restricted to the first `n` nodes in truncation order, without tail.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let order = self.spectrum.truncation_order();
        if n == 0 || n > order.len() {
            return Err(Error::param("N", format!("must lie in 1..={}", order.len())));
        }
        let mut idx: Vec<usize> = order[..n].to_vec();
        idx.sort_unstable();
        let pts = idx.iter().map(|&i| self.spectrum.points[i]).collect();
        let s = Spectrum::from_points(pts, Tail::None, format!("{} [N={n}]", self.spectrum.label))?;
        let pick = |v: &Vec<C<T>>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut d = Self::new(Arc::new(s), idx.iter().map(|&i| self.mu[i]).collect(), pick(&self.a), pick(&self.b), self.delta)?;
        d.c = pick(&self.c);
        d.flags = self.flags.clone();
        Ok(d)
    }
}

fn c_from_term<T: Real>(t: &KreinTerm<T>) -> Result<T> {
    if -t.log_abs_a_prime > T::ln_max() {
        return Err(Error::Overflow { re: t.t.as_f64(), im: 0.0 });
    }
    Ok(t.c())
}

fn removable_terms<T: Real>(g: &GeneratingFunction<T>, gate: Gate) -> Result<(Vec<KreinTerm<T>>, bool)> {
    match gate {
        Gate::Force => Ok((krein_diag::krein_terms(g)?, true)),
        Gate::RequireRemovable => {
            let r = krein_diag::verdict(g)?;
            if r.verdict != Verdict::Removable {
                return Err(Error::Refused(format!(
                    "spectrum `{}` is {:?} (confidence {:.2}); pass the force flag to override",
                    g.spectrum().label,
                    r.verdict,
                    r.confidence.as_f64()
                )));
            }
            let terms = if r.terms.is_empty() { krein_diag::krein_terms(g)? } else { r.terms };
            Ok((terms, false))
        }
    }
}

/// Data whose `beta` equals `1/A`: `c_n = -1/A'(t_n)`, `delta = 1`.
pub fn synthesize<T: Real>(g: &GeneratingFunction<T>, masses: MassPolicy, gate: Gate) -> Result<PerturbationData<T>> {
    let (terms, forced) = removable_terms(g, gate)?;
    let s = g.spectrum().clone();
    let n = s.len();
    let mut mu = vec![T::one(); n];
    let mut a = vec![cplx(T::zero(), T::zero()); n];
    let mut b = a.clone();
    let mut c = a.clone();
    let mut underflow = Vec::new();
    for t in &terms {
        let i = t.position;
        let cn = c_from_term(t)?;
        if cn == T::zero() {
            underflow.push(i);
            continue;
        }
        c[i] = real(cn);
        match masses {
            MassPolicy::Unit => {
                let r = cn.abs().sqrt();
                a[i] = real(r);
                b[i] = real(cn / r);
            }
            MassPolicy::AbsC => {
                mu[i] = cn.abs();
                a[i] = real(T::one());
                b[i] = real(cn.signum());
            }
        }
    }
    underflow.sort_unstable();
    let mut d = PerturbationData::new(s, mu, a, b, T::one())?;
    // keep the exact c_n rather than the product of rounded factors
    for (i, v) in c.into_iter().enumerate() {
        if v != C::new(T::zero(), T::zero()) {
            d.c[i] = v;
        }
    }
    d.flags = Flags { synthesized: true, forced, mass_policy: Some(masses), smooth: None, underflow };
    Ok(d)
}

/// Parameters of smooth synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec<T> {
    pub alpha1: T,
    pub alpha2: T,
    pub gamma: T,
    pub rescale: bool,
}

/// Classifies `sum exp(y_j)` over a subsequence: `Some(true)` convergent, `Some(false)` divergent.
fn series_class<T: Real>(y: &[T]) -> Option<bool> {
    let j: Vec<T> = (1..=y.len()).map(T::idx).collect();
    let (_, _, v, _) = krein_diag::series_verdict(&j, y)?;
    match v {
        Verdict::Removable => Some(true),
        Verdict::Nonremovable => Some(false),
        Verdict::Inconclusive => None,
    }
}

/// Divergence proxy: fitted divergence, or a final partial sum above ten times the first-half sum.
pub fn divergence_proxy<T: Real>(terms: &[T]) -> bool {
    let n = terms.len();
    let total: T = terms.iter().copied().sum();
    let first: T = terms[..n / 2].iter().copied().sum();
    if !total.is_finite() || total > T::lit(10.0) * first {
        return true;
    }
    let y: Vec<T> = terms.iter().map(|t| t.ln()).collect();
    split_class(&y) == Some(false)
}

/// Convergence of a sum of positive terms, tested separately on odd and even positions.
pub fn convergence_test<T: Real>(terms: &[T]) -> bool {
    let y: Vec<T> = terms.iter().map(|t| t.ln()).collect();
    split_class(&y) == Some(true)
}

fn split_class<T: Real>(y: &[T]) -> Option<bool> {
    let odd: Vec<T> = y.iter().step_by(2).copied().filter(|v| v.is_finite()).collect();
    let even: Vec<T> = y.iter().skip(1).step_by(2).copied().filter(|v| v.is_finite()).collect();
    match (series_class(&odd), series_class(&even)) {
        (Some(false), _) | (_, Some(false)) => Some(false),
        (Some(true), Some(true)) => Some(true),
        _ => None,
    }
}

/// Smooth synthesis: `a' = |c|^{1/2} |t|^{(2-2a1-g)/2}`, `b' = conj(c)|c|^{-1/2} |t|^{(2a1+g-2)/2}`
/// with unit masses, then the optional rescaling that keeps `a' conj(b') = c`.
pub fn synthesize_smooth<T: Real>(g: &GeneratingFunction<T>, spec: SmoothSpec<T>, gate: Gate) -> Result<PerturbationData<T>> {
    let SmoothSpec { alpha1, alpha2, gamma, rescale } = spec;
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    for (v, name) in [(alpha1, "alpha1"), (alpha2, "alpha2")] {
        if !(v >= zero && v < one) {
            return Err(Error::param(name, format!("must lie in [0, 1), got {v}")));
        }
    }
    if !(gamma > zero && gamma < two) {
        return Err(Error::param("gamma", format!("must lie in (0, 2), got {gamma}")));
    }
    if alpha1 + alpha2 > two - gamma + T::lit(1e-12) {
        return Err(Error::param("alpha1 + alpha2", format!("must not exceed 2 - gamma = {}", two - gamma)));
    }
    let (terms, forced) = match gate {
        Gate::Force => (krein_diag::krein_terms(g)?, true),
        Gate::RequireRemovable => (krein_diag::krein_terms(g)?, false),
    };
    // sum 1/(|t|^gamma |A'(t)|) must converge
    let conv: Vec<T> = terms.iter().map(|t| (-gamma * t.t.abs().ln() - t.log_abs_a_prime).exp()).collect();
    if !forced && !convergence_test(&conv) {
        return Err(Error::Refused(format!("sum 1/(|t|^{gamma} |A'(t)|) is not judged convergent")));
    }
    let s = g.spectrum().clone();
    let n = s.len();
    // work in truncation order
    let mut cn = Vec::with_capacity(n);
    let mut underflow = Vec::new();
    for t in &terms {
        let c = c_from_term(t)?;
        if c == zero {
            underflow.push(t.position);
        }
        cn.push(c);
    }
    let ta: Vec<T> = terms.iter().map(|t| t.t.abs()).collect();
    let ea = (two - two * alpha1 - gamma) / two;
    let mut a1: Vec<T> = cn.iter().zip(&ta).map(|(c, t)| c.abs().sqrt() * t.powf(ea)).collect();
    let mut b1: Vec<T> = cn.iter().zip(&ta).map(|(c, t)| if *c == zero { zero } else { c.signum() * c.abs().sqrt() * t.powf(-ea) }).collect();

    let check = |a: &[T], b: &[T]| {
        let sq = |v: &[T], w: Option<T>| -> Vec<T> {
            v.iter().zip(&ta).map(|(x, t)| *x * *x * w.map_or(one, |al| t.powf(two * al - two))).collect()
        };
        let a_div = divergence_proxy(&sq(a, None));
        let b_div = divergence_proxy(&sq(b, None));
        let a_w = convergence_test(&sq(a, Some(alpha1)));
        let b_w = convergence_test(&sq(b, Some(alpha2)));
        (a_div, b_div, a_w, b_w)
    };

    let mut info = None;
    if rescale {
        let mut chosen = None;
        for s_exp in 0..=8 {
            let sf = T::idx(s_exp);
            let p: Vec<T> = (1..=n).map(|j| if j % 2 == 1 { T::idx(j).powf(sf) } else { T::idx(j).powf(-sf) }).collect();
            let a2: Vec<T> = a1.iter().zip(&p).map(|(x, p)| *x * *p).collect();
            let b2: Vec<T> = b1.iter().zip(&p).map(|(x, p)| *x / *p).collect();
            let (ad, bd, aw, bw) = check(&a2, &b2);
            if ad && bd && aw && bw {
                chosen = Some((a2, b2, RescaleInfo { rule: "polynomial".into(), exponent: Some(sf), a_divergent: ad, b_divergent: bd, a_weighted_convergent: aw, b_weighted_convergent: bw }));
                break;
            }
        }
        if chosen.is_none() {
            // floor each unweighted term at one on alternating positions
            let p: Vec<T> = (0..n)
                .map(|k| {
                    if cn[k] == zero {
                        one
                    } else if k % 2 == 0 {
                        one.max(one / a1[k].abs())
                    } else {
                        one.min(b1[k].abs())
                    }
                })
                .collect();
            let a2: Vec<T> = a1.iter().zip(&p).map(|(x, p)| *x * *p).collect();
            let b2: Vec<T> = b1.iter().zip(&p).map(|(x, p)| *x / *p).collect();
            let (ad, bd, aw, bw) = check(&a2, &b2);
            if !(ad && bd && aw && bw) {
                return Err(Error::Refused(format!(
                    "rescaling failed: unweighted divergence ({ad}, {bd}), weighted convergence ({aw}, {bw})"
                )));
            }
            chosen = Some((a2, b2, RescaleInfo { rule: "floor".into(), exponent: None, a_divergent: ad, b_divergent: bd, a_weighted_convergent: aw, b_weighted_convergent: bw }));
        }
        let (a2, b2, ri) = chosen.unwrap();
        a1 = a2;
        b1 = b2;
        info = Some(ri);
    }

    let mut a = vec![cplx(zero, zero); n];
    let mut b = a.clone();
    let mut c = a.clone();
    for (k, t) in terms.iter().enumerate() {
        a[t.position] = real(a1[k]);
        b[t.position] = real(b1[k]);
        c[t.position] = real(cn[k]);
    }
    let mut d = PerturbationData::new(s, vec![one; n], a, b, one)?;
    for (i, v) in c.into_iter().enumerate() {
        if v.re != zero {
            d.c[i] = v;
        }
    }
    underflow.sort_unstable();
    d.flags = Flags {
        synthesized: true,
        forced,
        mass_policy: Some(MassPolicy::Unit),
        smooth: Some(SmoothInfo { alpha1, alpha2, gamma, rescale: info }),
        underflow,
    };
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical_product::TruncationPolicy;
    use crate::spectra::{generate, Family, FamilySpec};

    fn gf(f: Family<f64>, n: usize) -> GeneratingFunction<f64> {
        let s = Arc::new(generate(&FamilySpec::new(f, n)).unwrap());
        GeneratingFunction::new(s, TruncationPolicy::exact()).unwrap()
    }

    #[test]
    fn squares_unit_masses() {
        let g = gf(Family::Squares { n0: 1 }, 200);
        let d = synthesize(&g, MassPolicy::Unit, Gate::RequireRemovable).unwrap();
        // c_n = -1/A'(n^2) = (-1)^{n+1} 2 n^2
        for (i, n) in [(0usize, 1.0f64), (1, 2.0), (2, 3.0)] {
            let oracle = if i % 2 == 0 { 2.0 } else { -2.0 } * n * n;
            assert!((d.c[i].re - oracle).abs() < 1e-10 * oracle.abs());
            assert!((d.a[i].re - oracle.abs().sqrt()).abs() < 1e-10);
        }
        for i in 0..d.mu.len() {
            let prod = d.a[i] * d.b[i].conj() * d.mu[i];
            assert!((prod - d.c[i]).norm() <= 4.0 * f64::EPSILON * d.c[i].norm());
        }
        assert!(d.flags.synthesized && !d.flags.forced);
    }

    #[test]
    fn abs_c_masses() {
        let g = gf(Family::Squares { n0: 1 }, 100);
        let d = synthesize(&g, MassPolicy::AbsC, Gate::RequireRemovable).unwrap();
        assert!((d.mu[1] - 8.0).abs() < 1e-10);
        assert_eq!(d.a[1].re, 1.0);
        assert_eq!(d.b[1].re, -1.0);
    }

    #[test]
    fn refuses_nonremovable() {
        let g = gf(Family::Squares { n0: 2 }, 100);
        assert!(matches!(synthesize(&g, MassPolicy::Unit, Gate::RequireRemovable), Err(Error::Refused(_))));
        let d = synthesize(&g, MassPolicy::Unit, Gate::Force).unwrap();
        assert!(d.flags.forced);
    }

    #[test]
    fn smooth_parameter_checks() {
        let g = gf(Family::Squares { n0: 1 }, 100);
        let bad = SmoothSpec { alpha1: 0.5, alpha2: 0.5, gamma: 1.6, rescale: false };
        assert!(matches!(synthesize_smooth(&g, bad, Gate::RequireRemovable), Err(Error::Parameter { .. })));
        let bad = SmoothSpec { alpha1: 0.1, alpha2: 0.1, gamma: 2.0, rescale: false };
        assert!(synthesize_smooth(&g, bad, Gate::RequireRemovable).is_err());
    }

    #[test]
    fn smooth_preserves_c() {
        let g = gf(Family::Squares { n0: 1 }, 400);
        let d = synthesize_smooth(&g, SmoothSpec { alpha1: 0.2, alpha2: 0.2, gamma: 1.6, rescale: true }, Gate::RequireRemovable).unwrap();
        for i in 0..d.mu.len() {
            let prod = d.a[i] * d.b[i].conj() * d.mu[i];
            assert!((prod - d.c[i]).norm() <= 1e-12 * d.c[i].norm());
        }
        let info = d.flags.smooth.unwrap().rescale.unwrap();
        assert_eq!(info.exponent, Some(0.0));
    }

    #[test]
    fn truncation_keeps_smallest_nodes() {
        let s = Arc::new(generate(&FamilySpec::new(Family::Livsic { c: 1.0 }, 50)).unwrap());
        let d = PerturbationData::livsic_pattern(s, std::f64::consts::FRAC_1_PI).unwrap();
        let t = d.truncated(4).unwrap();
        assert_eq!(t.spectrum.points, vec![-1.5, -0.5, 0.5, 1.5]);
        assert!((t.c[0] - cplx(0.0, std::f64::consts::FRAC_1_PI)).norm() < 1e-15);
    }

    #[test]
    fn json_round_trip_recomputes_c() {
        let s = Arc::new(generate(&FamilySpec::new(Family::Squares { n0: 1 }, 5)).unwrap());
        let d = PerturbationData::new(s, vec![1.0; 5], vec![cplx(1.0, 1.0); 5], vec![cplx(2.0, 0.0); 5], 1.0).unwrap();
        let js = serde_json::to_string(&d).unwrap();
        let mut back: PerturbationData<f64> = serde_json::from_str(&js).unwrap();
        back.validate().unwrap();
        assert_eq!(back.c[0], cplx(2.0, 2.0));
    }

    #[test]
    fn proxies() {
        let grow: Vec<f64> = (1..=400).map(|n| 2.0 * (n * n) as f64).collect();
        assert!(divergence_proxy(&grow));
        let conv: Vec<f64> = (1..=400).map(|n| 1.0 / (n as f64).powf(2.0)).collect();
        assert!(!divergence_proxy(&conv) && convergence_test(&conv));
        let harm: Vec<f64> = (1..=400).map(|n| 1.0 / n as f64).collect();
        assert!(divergence_proxy(&harm) && !convergence_test(&harm));
    }
}
