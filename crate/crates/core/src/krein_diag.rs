//! Removability diagnostics: Krein terms, decay fits and verdicts.
//!
//! A spectrum is removable exactly when `sum 1/(t_n^2 |A'(t_n)|)` converges.
//! Finite data cannot decide that, so the series is classified by fitting the
//! decay of its terms on each infinite side. Terms live in log space because
//! `|A'(t_n)|` routinely leaves the floating-point range.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical_product::{GeneratingFunction, TruncationPolicy};
use crate::error::{Error, Result};
use crate::fit;
use crate::scalar::{log_add_exp, Real};
use crate::spectra::{Side, Spectrum};

/// Fixed margin around `p = 1` for power-law decay.
pub const P_MARGIN: f64 = 0.15;
/// Minimum confidence for a decisive verdict.
pub const MIN_CONFIDENCE: f64 = 0.9;
/// Minimum number of terms on an infinite side.
pub const MIN_TERMS: usize = 64;
/// Relative gap below which two nodes count as a near pair.
pub const NEAR_PAIR_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Removable,
    Nonremovable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SeriesFit,
    AsymptoticPredictor,
    ClosedForm,
    Degenerate,
}

/// One Krein term `k_n = 1/(t_n^2 |A'(t_n)|)`, with `c_n = -1/A'(t_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KreinTerm<T> {
    /// Position in the spectrum's point list.
    pub position: usize,
    pub side: Side,
    /// 1-based rank by `|t|` on its side.
    pub rank: usize,
    pub t: T,
    pub log_abs_a_prime: T,
    pub a_prime_sign: T,
    pub log_k: T,
    /// Running `ln sum k` in truncation order.
    pub log_partial_sum: T,
}

impl<T: Real> KreinTerm<T> {
    /// `A'(t_n)`, possibly infinite or zero after conversion.
    pub fn a_prime(&self) -> T {
        self.a_prime_sign * self.log_abs_a_prime.exp()
    }

    pub fn k(&self) -> T {
        self.log_k.exp()
    }

    pub fn partial_sum(&self) -> T {
        self.log_partial_sum.exp()
    }

    /// `c_n = -1/A'(t_n)`.
    pub fn c(&self) -> T {
        -self.a_prime_sign * (-self.log_abs_a_prime).exp()
    }
}

/// Fitted decay law of `ln k` against the side rank `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DecayModel<T> {
    /// `k ~ e^c j^{-p}`.
    Power { c: T, p: T, p_se: T },
    /// `k ~ e^{c - beta j^alpha}`, `beta > 0`.
    Exp { c: T, beta: T, alpha: T },
    /// `k ~ e^{c + beta j^alpha}`, `beta > 0`.
    Growth { c: T, beta: T, alpha: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideFit<T> {
    pub side: Side,
    pub model: DecayModel<T>,
    pub residual: T,
    pub verdict: Verdict,
    pub confidence: T,
    /// Rank window `[first, last]` used by the main fit.
    pub window: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovabilityReport<T> {
    pub verdict: Verdict,
    pub confidence: T,
    pub method: Method,
    /// Model of the deciding side (or of the first fitted side).
    pub model: Option<DecayModel<T>>,
    pub residual: Option<T>,
    pub sides: Vec<SideFit<T>>,
    /// Terms in truncation order.
    pub terms: Vec<KreinTerm<T>>,
    /// `q = 1/A(0)`.
    pub q: T,
    pub p_margin: T,
    pub min_confidence: T,
    pub notes: Vec<String>,
}

/// Krein terms for every materialized node, in truncation order.
pub fn krein_terms<T: Real>(g: &GeneratingFunction<T>) -> Result<Vec<KreinTerm<T>>> {
    let s = g.spectrum();
    let order = s.truncation_order();
    let derivs: Vec<(T, T)> = order.par_iter().map(|&i| g.log_abs_deriv_at_node(i)).collect::<Result<_>>()?;
    let mut rank = [0usize; 2];
    let mut acc = T::neg_infinity();
    let mut out = Vec::with_capacity(order.len());
    for (&i, &(la, sa)) in order.iter().zip(&derivs) {
        let t = s.points[i];
        let side = Side::of(t);
        let r = &mut rank[(side == Side::Positive) as usize];
        *r += 1;
        let log_k = -(t * t).ln() - la;
        acc = log_add_exp(acc, log_k);
        out.push(KreinTerm { position: i, side, rank: *r, t, log_abs_a_prime: la, a_prime_sign: sa, log_k, log_partial_sum: acc });
    }
    Ok(out)
}

/// Smallest relative gap between consecutive nodes, with its location.
pub fn min_relative_gap<T: Real>(s: &Spectrum<T>) -> Option<(T, T, T)> {
    s.points
        .windows(2)
        .map(|w| ((w[1] - w[0]) / w[0].abs().max(w[1].abs()).max(T::one()), w[0], w[1]))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
}

fn candidate_alphas<T: Real>() -> [T; 6] {
    [T::lit(0.25), T::lit(1.0 / 3.0), T::lit(0.5), T::lit(2.0 / 3.0), T::lit(0.75), T::one()]
}

/// Fits the best decay model to `(j, ln k)` pairs.
fn fit_window<T: Real>(j: &[T], y: &[T]) -> Option<(DecayModel<T>, T)> {
    let lx: Vec<T> = j.iter().map(|v| v.ln()).collect();
    let pw = fit::line(&lx, y)?;
    let mut best = (DecayModel::Power { c: pw.intercept, p: -pw.slope, p_se: pw.slope_se }, pw.rms);
    let span_y = y.iter().fold(T::neg_infinity(), |m, v| m.max(*v)) - y.iter().fold(T::infinity(), |m, v| m.min(*v));
    for alpha in candidate_alphas::<T>() {
        let x: Vec<T> = j.iter().map(|v| v.powf(alpha)).collect();
        let Some(f) = fit::line(&x, y) else { continue };
        // an exponential trend must account for a sizeable change of ln k
        let trend = f.slope.abs() * (x[x.len() - 1] - x[0]);
        if trend < T::one() || trend < T::lit(0.5) * span_y {
            continue;
        }
        if f.rms < T::lit(0.5) * best.1 {
            let m = if f.slope < T::zero() {
                DecayModel::Exp { c: f.intercept, beta: -f.slope, alpha }
            } else {
                DecayModel::Growth { c: f.intercept, beta: f.slope, alpha }
            };
            best = (m, f.rms);
        }
    }
    Some(best)
}

fn classify<T: Real>(m: &DecayModel<T>) -> Verdict {
    match *m {
        DecayModel::Exp { .. } => Verdict::Removable,
        DecayModel::Growth { .. } => Verdict::Nonremovable,
        DecayModel::Power { p, p_se, .. } => {
            let one = T::one();
            if p >= one + T::lit(P_MARGIN) {
                Verdict::Removable
            } else if p <= one + (T::lit(3.0) * p_se).max(T::lit(1e-3)) {
                // harmonic or slower: the series diverges
                Verdict::Nonremovable
            } else {
                Verdict::Inconclusive
            }
        }
    }
}

/// Classifies a series from `(rank, ln term)` pairs using the last half of the data.
///
/// Returns the model, its residual, the verdict and the sub-window agreement.
pub fn series_verdict<T: Real>(j: &[T], y: &[T]) -> Option<(DecayModel<T>, T, Verdict, T)> {
    let n = j.len();
    if n < 16 || y.len() != n {
        return None;
    }
    let h = n / 2;
    let (model, residual) = fit_window(&j[h..], &y[h..])?;
    let verdict = classify(&model);
    // the four quarters of the last half, plus three nested tail windows
    let q = (n - h) / 4;
    let windows = [
        (h, h + q),
        (h + q, h + 2 * q),
        (h + 2 * q, h + 3 * q),
        (h + 3 * q, n),
        (n - (n - h) / 2, n),
        (n - (n - h) / 3, n),
        (n - (n - h) * 3 / 4, n),
    ];
    let mut agree = 0usize;
    let mut total = 0usize;
    for (a, b) in windows {
        if b - a < 8 {
            continue;
        }
        total += 1;
        if let Some((m, _)) = fit_window(&j[a..b], &y[a..b]) {
            if classify(&m) == verdict {
                agree += 1;
            }
        }
    }
    let confidence = if total == 0 { T::zero() } else { T::idx(agree) / T::idx(total) };
    let verdict = if verdict != Verdict::Inconclusive && confidence < T::lit(MIN_CONFIDENCE) { Verdict::Inconclusive } else { verdict };
    Some((model, residual, verdict, confidence))
}

fn fit_side<T: Real>(side: Side, terms: &[&KreinTerm<T>]) -> Option<SideFit<T>> {
    let j: Vec<T> = terms.iter().map(|t| T::idx(t.rank)).collect();
    let y: Vec<T> = terms.iter().map(|t| t.log_k).collect();
    let (model, residual, verdict, confidence) = series_verdict(&j, &y)?;
    let n = terms.len();
    Some(SideFit { side, model, residual, verdict, confidence, window: (terms[n / 2].rank, terms[n - 1].rank) })
}

fn degenerate_report<T: Real>(gap: (T, T, T)) -> RemovabilityReport<T> {
    RemovabilityReport {
        verdict: Verdict::Nonremovable,
        confidence: T::one(),
        method: Method::Degenerate,
        model: None,
        residual: None,
        sides: vec![],
        terms: vec![],
        q: T::one(),
        p_margin: T::lit(P_MARGIN),
        min_confidence: T::lit(MIN_CONFIDENCE),
        notes: vec![format!("near pair {} / {} with relative gap {:e}", gap.1, gap.2, gap.0.as_f64())],
    }
}

/// Classifies the spectrum of `g` by fitting its Krein terms.
pub fn verdict<T: Real>(g: &GeneratingFunction<T>) -> Result<RemovabilityReport<T>> {
    let s = g.spectrum();
    if let Some(gap) = min_relative_gap(s) {
        if gap.0 < T::lit(NEAR_PAIR_GAP) {
            return Ok(degenerate_report(gap));
        }
    }
    let terms = krein_terms(g)?;
    let mut sides = Vec::new();
    let mut notes = Vec::new();
    for side in [Side::Negative, Side::Positive] {
        let on: Vec<&KreinTerm<T>> = terms.iter().filter(|t| t.side == side).collect();
        let infinite = s.tail.law(side).is_some() || (s.tail.is_none() && on.len() >= MIN_TERMS);
        if !infinite {
            if !on.is_empty() {
                notes.push(format!("{} side is finite ({} nodes)", side.name(), on.len()));
            }
            continue;
        }
        if on.len() < MIN_TERMS {
            return Err(Error::Insufficient { side: side.name().into(), needed: MIN_TERMS, got: on.len() });
        }
        let f = fit_side(side, &on).ok_or_else(|| Error::Numerical(format!("decay fit failed on the {} side", side.name())))?;
        sides.push(f);
    }
    if sides.is_empty() {
        return Err(Error::Insufficient { side: "any".into(), needed: MIN_TERMS, got: terms.len() });
    }
    let deciding = sides
        .iter()
        .find(|f| f.verdict == Verdict::Nonremovable)
        .or_else(|| sides.iter().find(|f| f.verdict == Verdict::Inconclusive))
        .unwrap_or(&sides[0]);
    let verdict = deciding.verdict;
    let confidence = if verdict == Verdict::Removable {
        sides.iter().fold(T::one(), |m, f| m.min(f.confidence))
    } else {
        deciding.confidence
    };
    let method = if g.is_closed_form() { Method::ClosedForm } else { Method::SeriesFit };
    Ok(RemovabilityReport {
        verdict,
        confidence,
        method,
        model: Some(deciding.model),
        residual: Some(deciding.residual),
        sides,
        terms,
        q: T::one(),
        p_margin: T::lit(P_MARGIN),
        min_confidence: T::lit(MIN_CONFIDENCE),
        notes,
    })
}

/// Levin-Pfluger forecast from the counting-function asymptotics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast<T> {
    pub u_minus: T,
    pub u_plus: T,
    pub verdict: Verdict,
}

/// `u_+- = D_+- cot(pi rho_+-) + D_-+ / sin(pi rho_-+)`; removable iff both are positive.
///
/// A side with zero density is empty and its order is ignored.
pub fn lp_forecast<T: Real>(rho_minus: T, rho_plus: T, d_minus: T, d_plus: T) -> Result<Forecast<T>> {
    let check = |rho: T, d: T, name: &str| {
        if d < T::zero() || !d.is_finite() {
            return Err(Error::param(&format!("D_{name}"), "must be nonnegative"));
        }
        if d > T::zero() && !(rho > T::zero() && rho < T::one()) {
            return Err(Error::param(&format!("rho_{name}"), format!("must lie in (0, 1), got {rho}")));
        }
        Ok(())
    };
    check(rho_minus, d_minus, "minus")?;
    check(rho_plus, d_plus, "plus")?;
    if d_minus == T::zero() && d_plus == T::zero() {
        return Err(Error::param("D", "at least one side must be nonempty"));
    }
    let pi = T::PI();
    let cot = |rho: T, d: T| if d == T::zero() { T::zero() } else { d / (pi * rho).tan() };
    let csc = |rho: T, d: T| if d == T::zero() { T::zero() } else { d / (pi * rho).sin() };
    let u_minus = cot(rho_minus, d_minus) + csc(rho_plus, d_plus);
    let u_plus = cot(rho_plus, d_plus) + csc(rho_minus, d_minus);
    let verdict = if u_minus > T::zero() && u_plus > T::zero() { Verdict::Removable } else { Verdict::Nonremovable };
    Ok(Forecast { u_minus, u_plus, verdict })
}

/// Verdict from the family's growth data alone.
pub fn verdict_by_forecast<T: Real>(s: &Spectrum<T>) -> Result<RemovabilityReport<T>> {
    let (rm, dm, rp, dp) = s
        .family
        .as_ref()
        .and_then(|f| f.growth_data())
        .ok_or_else(|| Error::param("family", "no growth data for this spectrum"))?;
    let f = lp_forecast(rm, rp, dm, dp)?;
    Ok(RemovabilityReport {
        verdict: f.verdict,
        confidence: T::one(),
        method: Method::AsymptoticPredictor,
        model: None,
        residual: None,
        sides: vec![],
        terms: vec![],
        q: T::one(),
        p_margin: T::lit(P_MARGIN),
        min_confidence: T::lit(MIN_CONFIDENCE),
        notes: vec![format!("u_minus = {}, u_plus = {}", f.u_minus, f.u_plus)],
    })
}

/// Adds and removes finitely many points, then re-runs the verdict with a numeric product.
pub fn finite_edit<T: Real>(s: &Spectrum<T>, add: &[T], remove: &[T], policy: TruncationPolicy) -> Result<RemovabilityReport<T>> {
    let mut points = s.points.clone();
    for r in remove {
        let i = s.position_of(*r).ok_or(Error::Membership(r.as_f64()))?;
        let t = s.points[i];
        let k = points.iter().position(|p| *p == t).ok_or(Error::Membership(r.as_f64()))?;
        points.remove(k);
    }
    let max = s.max_abs();
    for a in add {
        if !a.is_finite() || *a == T::zero() {
            return Err(Error::param("add", "points must be finite and nonzero"));
        }
        if a.abs() > max {
            return Err(Error::param("add", format!("{a} lies beyond the materialized range")));
        }
        if points.iter().any(|p| (*p - *a).abs() <= T::lit(1e-12) * a.abs().max(T::one())) {
            return Err(Error::param("add", format!("{a} is already a member")));
        }
        points.push(*a);
    }
    let mut edited = Spectrum::from_points(points, s.tail.clone(), format!("{} (edited)", s.label))?;
    edited.count = s.count;
    let g = GeneratingFunction::new(Arc::new(edited), policy)?;
    verdict(&g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{generate, Family, FamilySpec};

    fn gf(f: Family<f64>, n: usize) -> GeneratingFunction<f64> {
        let s = Arc::new(generate(&FamilySpec::new(f, n)).unwrap());
        GeneratingFunction::new(s, TruncationPolicy::exact()).unwrap()
    }

    #[test]
    fn squares_terms_and_partial_sums() {
        let g = gf(Family::Squares { n0: 1 }, 300);
        let terms = krein_terms(&g).unwrap();
        // k_n = 2 / n^2 exactly
        for t in terms.iter().take(50) {
            let n = t.rank as f64;
            assert!((t.k() - 2.0 / (n * n)).abs() < 1e-11 * t.k());
            assert!((t.c() - -1.0 / t.a_prime()).abs() < 1e-12 * t.c().abs());
        }
        assert!(terms.windows(2).all(|w| w[1].log_partial_sum >= w[0].log_partial_sum));
        let r = verdict(&g).unwrap();
        assert_eq!(r.verdict, Verdict::Removable);
        assert!(matches!(r.model, Some(DecayModel::Power { p, .. }) if (p - 2.0).abs() < 0.05));
    }

    #[test]
    fn squares_from_two_is_nonremovable() {
        let r = verdict(&gf(Family::Squares { n0: 2 }, 300)).unwrap();
        assert_eq!(r.verdict, Verdict::Nonremovable);
        assert!(r.confidence >= 0.9);
    }

    #[test]
    fn exponential_regimes() {
        let r = verdict(&gf(Family::OneSidedPower { gamma: 3.0 }, 400)).unwrap();
        assert_eq!(r.verdict, Verdict::Removable);
        assert!(matches!(r.model, Some(DecayModel::Exp { .. })));
        let r = verdict(&gf(Family::OneSidedPower { gamma: 1.5 }, 400)).unwrap();
        assert_eq!(r.verdict, Verdict::Nonremovable);
        assert!(matches!(r.model, Some(DecayModel::Growth { .. })));
    }

    #[test]
    fn integers_with_and_without_extra_point() {
        let r = verdict(&gf(Family::IntegersPunctured { t0: None }, 300)).unwrap();
        assert_eq!(r.verdict, Verdict::Nonremovable);
        let r = verdict(&gf(Family::IntegersPunctured { t0: Some(0.5) }, 300)).unwrap();
        assert_eq!(r.verdict, Verdict::Removable);
    }

    #[test]
    fn insufficient_terms() {
        let g = gf(Family::Squares { n0: 1 }, 20);
        assert!(matches!(verdict(&g), Err(Error::Insufficient { .. })));
    }

    #[test]
    fn near_pairs_short_circuit() {
        let np = Family::NearPairs { base: Box::new(Family::IntegersPunctured { t0: None }), q: 0.5, pairs: None };
        let s = generate(&FamilySpec::new(np, 100)).unwrap();
        let g = GeneratingFunction::new(Arc::new(s), TruncationPolicy::exact()).unwrap();
        let r = verdict(&g).unwrap();
        assert_eq!(r.verdict, Verdict::Nonremovable);
        assert_eq!(r.method, Method::Degenerate);
    }

    #[test]
    fn lp_forecast_examples() {
        let f = lp_forecast(0.4f64, 0.4, 1.0, 1.0).unwrap();
        let u = 1.0 / (0.4 * std::f64::consts::PI).tan() + 1.0 / (0.4 * std::f64::consts::PI).sin();
        assert!((f.u_minus - u).abs() < 1e-12 && (f.u_plus - u).abs() < 1e-12);
        assert!((f.u_plus - 1.3764).abs() < 1e-4);
        assert_eq!(f.verdict, Verdict::Removable);
        let one = lp_forecast(0.5f64, 0.8, 0.0, 1.0).unwrap();
        assert_eq!(one.verdict, Verdict::Nonremovable);
        assert!(lp_forecast(1.0f64, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn finite_edits() {
        let s = generate(&FamilySpec::new(Family::Squares { n0: 1 }, 300)).unwrap();
        let r = finite_edit(&s, &[], &[1.0], TruncationPolicy::exact()).unwrap();
        assert_eq!(r.verdict, Verdict::Nonremovable);
        let r = finite_edit(&s, &[-3.5, 2.5], &[], TruncationPolicy::exact()).unwrap();
        assert_eq!(r.verdict, Verdict::Removable);
        assert!(matches!(finite_edit(&s, &[], &[2.0], TruncationPolicy::exact()), Err(Error::Membership(_))));
    }
}
