//! The functional model: `rho`, `beta`, the inner function `Theta`, `phi`, `E`,
//! zero counting for `beta` and the Livsic example.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::canonical_product::GeneratingFunction;
use crate::contour::{self, Rect, Sample, WindingOptions};
use crate::error::{Error, Result};
use crate::fit;
use crate::perturb_synth::PerturbationData;
use crate::scalar::{cplx, real, Real, C};
use crate::spectra::{Side, Spectrum};
use crate::tails::{TailOrder, TailSums};

/// Distance (relative to `max(1, |t|)`) below which a point counts as a node.
pub const NODE_PROXIMITY: f64 = 1e-14;
/// Smallest `|1 + Theta|` accepted by [`ModelEvaluator::e`].
pub const CONDITIONING_FLOOR: f64 = 1e-14;
/// Smallest `|beta|` accepted on a counting contour.
pub const CONTOUR_FLOOR: f64 = 1e-10;
/// Required clearance of a contour from a node, as a fraction of the local gap.
pub const CLEARANCE: f64 = 1e-3;

/// A value with an estimate of the truncation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: C<T>,
    pub error_estimate: T,
}

#[derive(Debug, Clone)]
pub struct ModelEvaluator<T> {
    data: Arc<PerturbationData<T>>,
    gen: Arc<GeneratingFunction<T>>,
    rho_shift: T,
    order: TailOrder,
    w: Vec<T>,
    w_tail: TailSums<T>,
    c_tail: TailSums<T>,
}

impl<T: Real> ModelEvaluator<T> {
    pub fn new(data: Arc<PerturbationData<T>>, gen: Arc<GeneratingFunction<T>>) -> Result<Self> {
        let (p, q) = (&data.spectrum.points, &gen.spectrum().points);
        if p.len() != q.len() || p.iter().zip(q).any(|(a, b)| a != b) {
            return Err(Error::param("data", "perturbation data and generating function use different spectra"));
        }
        let pairing = gen.policy().pairing;
        let tail = &data.spectrum.tail;
        let (w_tail, c_tail) = match &data.tail_weights {
            Some(tw) => (
                TailSums::with_weights(tail, tw.w_minus, tw.w_plus, pairing),
                TailSums::with_weights(tail, tw.c_minus, tw.c_plus, pairing),
            ),
            None => (TailSums::with_weights(tail, None, None, false), TailSums::with_weights(tail, None, None, false)),
        };
        let order = if gen.is_closed_form() { TailOrder::Exact } else { gen.policy().order };
        let w = data.w();
        Ok(ModelEvaluator { data, gen, rho_shift: T::zero(), order, w, w_tail, c_tail })
    }

    /// Real constant added to `rho`.
    pub fn with_rho_shift(mut self, shift: T) -> Self {
        self.rho_shift = shift;
        self
    }

    pub fn with_tail_order(mut self, order: TailOrder) -> Self {
        self.order = order;
        self
    }

    pub fn data(&self) -> &Arc<PerturbationData<T>> {
        &self.data
    }

    pub fn generating_function(&self) -> &Arc<GeneratingFunction<T>> {
        &self.gen
    }

    pub fn rho_shift(&self) -> T {
        self.rho_shift
    }

    fn spectrum(&self) -> &Spectrum<T> {
        &self.data.spectrum
    }

    fn check_node(&self, z: C<T>) -> Result<()> {
        let s = self.spectrum();
        if s.is_empty() {
            return Ok(());
        }
        let t = s.points[s.nearest(z.re)];
        let d = (z - t).norm();
        if d < T::lit(NODE_PROXIMITY) * t.abs().max(T::one()) {
            return Err(Error::Proximity { re: z.re.as_f64(), im: z.im.as_f64(), node: t.as_f64(), distance: d.as_f64() });
        }
        Ok(())
    }

    /// Crude bound on the neglected part of the sum when no tail weights are known.
    fn truncation_bound(&self, z: C<T>, weights: impl Fn(usize) -> T) -> T {
        let s = self.spectrum();
        let mut est = T::zero();
        for side in [Side::Negative, Side::Positive] {
            let Some(law) = s.tail.law(side) else { continue };
            let i = match side {
                Side::Negative => 0,
                Side::Positive => s.len() - 1,
            };
            if s.is_empty() || Side::of(s.points[i]) != side {
                continue;
            }
            let t = s.points[i];
            let m = T::from_u64(law.next).unwrap();
            let decay = (law.growth + law.growth - T::one()).max(T::lit(0.1));
            est += z.norm() * weights(i) * m / (t * t * decay);
        }
        est
    }

    fn sum<W: Fn(usize) -> C<T>>(&self, z: C<T>, weight: W) -> C<T> {
        let mut acc = C::new(T::zero(), T::zero());
        for (n, t) in self.spectrum().points.iter().enumerate() {
            let c = weight(n);
            if c != C::new(T::zero(), T::zero()) {
                acc = acc + c * z / ((real(*t) - z) * *t);
            }
        }
        acc
    }

    /// `rho(z) = shift + sum w_n (1/(t_n - z) - 1/t_n)` with `w_n = |b_n|^2 mu_n`.
    pub fn rho_estimate(&self, z: C<T>) -> Result<Estimate<T>> {
        self.check_node(z)?;
        let mut v = self.sum(z, |n| real(self.w[n])) + real(self.rho_shift);
        let err = if self.w_tail.is_empty() {
            self.truncation_bound(z, |n| self.w[n])
        } else {
            let t = self.w_tail.resolvent_sum(z, self.order)?;
            v = v + t.value;
            t.error_estimate
        };
        Ok(Estimate { value: v, error_estimate: err })
    }

    /// `beta(z) = delta + sum c_n (1/(t_n - z) - 1/t_n)` with `c_n = a_n conj(b_n) mu_n`.
    pub fn beta_estimate(&self, z: C<T>) -> Result<Estimate<T>> {
        self.check_node(z)?;
        let c = &self.data.c;
        let mut v = self.sum(z, |n| c[n]) + real(self.data.delta);
        let err = if self.c_tail.is_empty() {
            self.truncation_bound(z, |n| c[n].norm())
        } else {
            let t = self.c_tail.resolvent_sum(z, self.order)?;
            v = v + t.value;
            t.error_estimate
        };
        Ok(Estimate { value: v, error_estimate: err })
    }

    pub fn rho(&self, z: C<T>) -> Result<C<T>> {
        Ok(self.rho_estimate(z)?.value)
    }

    pub fn beta(&self, z: C<T>) -> Result<C<T>> {
        Ok(self.beta_estimate(z)?.value)
    }

    /// `Theta = (i - rho)/(i + rho)`.
    pub fn theta(&self, z: C<T>) -> Result<C<T>> {
        let r = self.rho(z)?;
        let i = cplx(T::zero(), T::one());
        Ok((i - r) / (i + r))
    }

    /// `phi = beta (1 + Theta)/2`.
    pub fn phi(&self, z: C<T>) -> Result<C<T>> {
        let th = self.theta(z)?;
        Ok(self.beta(z)? * (th + T::one()) * T::lit(0.5))
    }

    /// `phi~(z) = Theta(z) conj(phi(conj z))`.
    pub fn phi_tilde(&self, z: C<T>) -> Result<C<T>> {
        Ok(self.theta(z)? * self.phi(z.conj())?.conj())
    }

    pub fn a(&self, z: C<T>) -> Result<C<T>> {
        self.gen.eval(z)
    }

    /// `B = A rho`.
    pub fn b(&self, z: C<T>) -> Result<C<T>> {
        let r = self.rho(z)?;
        Ok(self.a(z)? * r)
    }

    /// `E = 2A/(1 + Theta)`, evaluated as `A (1 - i rho)`.
    pub fn e(&self, z: C<T>) -> Result<C<T>> {
        let r = self.rho(z)?;
        let i = cplx(T::zero(), T::one());
        let one_plus = (i + i) / (i + r);
        if one_plus.norm() < T::lit(CONDITIONING_FLOOR) {
            return Err(Error::Conditioning(format!("|1 + Theta| = {:e} at {}{:+}i", one_plus.norm(), z.re, z.im)));
        }
        let log = self.gen.log_eval(z)? + (real(T::one()) - i * r).ln();
        if log.re > T::ln_max() {
            return Err(Error::Overflow { re: z.re.as_f64(), im: z.im.as_f64() });
        }
        Ok(log.exp())
    }

    /// `E*(z) = conj(E(conj z))`.
    pub fn e_star(&self, z: C<T>) -> Result<C<T>> {
        Ok(self.e(z.conj())?.conj())
    }

    /// Point mass of the Clark measure at the node in position `n`: the limit of
    /// `eps Im rho(t_n + i eps)`, extrapolated in `eps^2` over the ladder.
    pub fn clark_mass(&self, n: usize, ladder: &[T]) -> Result<ClarkMass<T>> {
        let s = self.spectrum();
        if n >= s.len() {
            return Err(Error::param("n", format!("position {n} out of range")));
        }
        let mut eps: Vec<T> = ladder.to_vec();
        if eps.len() < 2 || eps.iter().any(|e| !(*e > T::zero())) {
            return Err(Error::param("eps", "need at least two positive ladder values"));
        }
        eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let t = s.points[n];
        let mut raw = Vec::with_capacity(eps.len());
        for e in &eps {
            raw.push(*e * self.rho(cplx(t, *e))?.im);
        }
        // Richardson table in h = eps^2
        let h: Vec<T> = eps.iter().map(|e| *e * *e).collect();
        let mut table = raw.clone();
        let mut last = raw[raw.len() - 1];
        let mut prev = raw[raw.len() - 2];
        for k in 1..table.len() {
            let next: Vec<T> = (0..table.len() - 1)
                .map(|i| (h[i] * table[i + 1] - h[i + k] * table[i]) / (h[i] - h[i + k]))
                .collect();
            prev = if next.len() >= 2 { next[next.len() - 2] } else { last };
            last = next[next.len() - 1];
            table = next;
        }
        let scale = last.abs().max(T::epsilon());
        let spread = (last - prev).abs().max((last - raw[raw.len() - 1]).abs());
        if !last.is_finite() || spread > T::lit(1e-3) * scale + T::lit(1e-12) {
            return Err(Error::Extrapolation(format!(
                "clark mass at t = {t}: ladder values {:?} do not settle",
                raw.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
            )));
        }
        Ok(ClarkMass { position: n, t, mass: last, expected: self.w[n], ladder: eps, raw })
    }

    /// `(y, Im rho(iy)/y)`; decays to zero when there is no point mass at infinity.
    pub fn mass_at_infinity(&self, ys: &[T]) -> Result<Vec<(T, T)>> {
        ys.iter().map(|y| Ok((*y, self.rho(cplx(T::zero(), *y))?.im / *y))).collect()
    }

    /// Rectangle `[-R, R] x [-R, R]`, sides moved to mid-gaps.
    ///
    /// `R` starts at half the largest node. Without tail weights, `beta_N` differs from the full
    /// `beta` by roughly `z sum_{k > N} c_k / t_k^2`, which swamps `1/A` where `|A|` is large, so
    /// `R` is halved until `|A(z) z| tau <= 1e-2` on the boundary, `tau` being the signed sum of
    /// `c_k / t_k^2` over the outer half of the nodes.
    pub fn default_rect(&self) -> Rect<T> {
        let s = self.spectrum();
        let mut r = (s.max_abs() * T::lit(0.5)).max(T::one());
        if self.data.tail_weights.is_none() && !s.points.is_empty() {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|a, b| s.points[*a].abs().partial_cmp(&s.points[*b].abs()).unwrap());
            let outer = &idx[idx.len() / 2..];
            let signed: C<T> = outer.iter().fold(C::new(T::zero(), T::zero()), |acc, &i| acc + self.data.c[i] / (s.points[i] * s.points[i]));
            let last = outer.last().map(|&i| self.data.c[i].norm() / (s.points[i] * s.points[i])).unwrap_or_else(T::zero);
            let tau = signed.norm().max(last);
            let floor = (s.points.iter().map(|t| t.abs()).fold(T::infinity(), T::min) * T::lit(1.5)).max(T::one());
            let limit = T::lit(1e-2).ln();
            let resolved = |r: T| {
                (0..64).all(|j| {
                    let w = T::lit(2.0 * std::f64::consts::PI * (j as f64 + 0.5) / 64.0);
                    let z = C::new(r * w.cos(), r * w.sin());
                    let z = z * (r / z.re.abs().max(z.im.abs()));
                    match self.gen.log_abs_eval(z) {
                        Ok(la) => la + (z.norm() * tau).ln() <= limit,
                        Err(_) => false,
                    }
                })
            };
            if tau > T::zero() {
                while r > floor && !resolved(r) {
                    r = (r * T::lit(0.5)).max(floor);
                }
            }
        }
        let mid = |x: T| -> T {
            let p = &s.points;
            let k = p.partition_point(|t| *t < x);
            if k == 0 || k == p.len() {
                return x;
            }
            (p[k - 1] + p[k]) * T::lit(0.5)
        };
        Rect { x0: mid(-r), x1: mid(r), y0: -r, y1: r }
    }

    fn local_gap(&self, i: usize) -> T {
        let p = &self.spectrum().points;
        let mut g = T::infinity();
        if i > 0 {
            g = g.min(p[i] - p[i - 1]);
        }
        if i + 1 < p.len() {
            g = g.min(p[i + 1] - p[i]);
        }
        if g.is_infinite() {
            g = p[i].abs().max(T::one());
        }
        g
    }

    fn check_clearance(&self, rect: &Rect<T>) -> Result<()> {
        let p = &self.spectrum().points;
        let span = |x: T| rect.y0 <= T::zero() && T::zero() <= rect.y1 && !x.is_nan();
        for (i, t) in p.iter().enumerate() {
            let need = T::lit(CLEARANCE) * self.local_gap(i);
            let mut d = T::infinity();
            if span(*t) {
                d = d.min((*t - rect.x0).abs()).min((*t - rect.x1).abs());
            }
            if *t >= rect.x0 && *t <= rect.x1 {
                d = d.min(rect.y0.abs()).min(rect.y1.abs());
            }
            if d < need {
                return Err(Error::param(
                    "rect",
                    format!("boundary passes within {:e} of the node {t}; clearance {:e} required", d.as_f64(), need.as_f64()),
                ));
            }
        }
        Ok(())
    }

    /// Zeros of `beta` inside `rect` (the default rectangle when `None`).
    pub fn count_zeros(&self, rect: Option<Rect<T>>, record: bool) -> Result<WindingReport<T>> {
        let rect = rect.unwrap_or_else(|| self.default_rect());
        self.check_clearance(&rect)?;
        let zero = C::new(T::zero(), T::zero());
        let poles = self
            .spectrum()
            .points
            .iter()
            .zip(&self.data.c)
            .filter(|(t, c)| **c != zero && rect.contains(real(**t)))
            .count();
        let opts = WindingOptions { min_abs: T::lit(CONTOUR_FLOOR), record, ..WindingOptions::default() };
        let w = contour::winding(|z| self.beta(z), &rect, &opts)?;
        let zeros = w.winding + poles as i64;
        if zeros < 0 {
            return Err(Error::Resolution(format!("winding {} with {poles} poles gives a negative zero count", w.winding)));
        }
        Ok(WindingReport {
            rect,
            poles,
            winding: w.winding,
            zeros: zeros as usize,
            min_abs: w.min_abs,
            evaluations: w.evaluations,
            depth: w.depth,
            samples: w.samples,
        })
    }

    /// `g = -A + i(B - shift A)`, defined for data in the dissipative pattern.
    pub fn livsic_g(&self) -> Result<LivsicG<'_, T>> {
        let d = &self.data;
        let tol = T::lit(1e-12);
        if (d.delta + T::one()).abs() > tol {
            return Err(Error::Pattern(format!("delta must be -1, got {}", d.delta)));
        }
        let i = cplx(T::zero(), T::one());
        for (n, (a, b)) in d.a.iter().zip(&d.b).enumerate() {
            if (*a - i * *b).norm() > tol * b.norm().max(T::one()) {
                return Err(Error::Pattern(format!("a_n = i b_n fails at position {n}")));
            }
        }
        Ok(LivsicG { model: self })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarkMass<T> {
    pub position: usize,
    pub t: T,
    pub mass: T,
    /// `|b_n|^2 mu_n` from the data.
    pub expected: T,
    pub ladder: Vec<T>,
    pub raw: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindingReport<T> {
    pub rect: Rect<T>,
    /// Nodes with nonzero `c_n` inside the rectangle.
    pub poles: usize,
    pub winding: i64,
    pub zeros: usize,
    /// Smallest `|beta|` seen on the boundary.
    pub min_abs: T,
    pub evaluations: usize,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Sample<T>>,
}

/// The entire function `g` of the dissipative pattern.
#[derive(Debug, Clone, Copy)]
pub struct LivsicG<'a, T> {
    model: &'a ModelEvaluator<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivsicReport<T> {
    pub rect: Rect<T>,
    pub winding: i64,
    /// Least-squares slope of `ln|g(iy)|` in `y`.
    pub slope: T,
    pub intercept: T,
    pub residual: T,
    pub y_range: (T, T),
}

impl<T: Real> LivsicG<'_, T> {
    pub fn eval(&self, z: C<T>) -> Result<C<T>> {
        let m = self.model;
        let a = m.a(z)?;
        let r = m.rho(z)? - real(m.rho_shift);
        let i = cplx(T::zero(), T::one());
        Ok(a * (i * r - T::one()))
    }

    /// `ln|g|`, without overflow.
    pub fn log_abs(&self, z: C<T>) -> Result<T> {
        let m = self.model;
        let r = m.rho(z)? - real(m.rho_shift);
        let i = cplx(T::zero(), T::one());
        Ok(m.gen.log_eval(z)?.re + (i * r - T::one()).norm().ln())
    }

    /// Winding over `[-10, 10]^2` and the growth of `ln|g(iy)|` for `y` in `[2, 20]`.
    ///
    /// Below the real axis `g = A (i rho - 1)` is exponentially smaller than `A`, so the
    /// factor `i rho - 1` cancels to nothing in floating point. The lower side is raised
    /// (in steps of `1/2`) until that factor stays above `1e-9` along it.
    pub fn report(&self) -> Result<LivsicReport<T>> {
        let m = self.model;
        let i = cplx(T::zero(), T::one());
        let ten = T::lit(10.0);
        let factor = |z: C<T>| -> Result<C<T>> { Ok(i * (m.rho(z)? - real(m.rho_shift)) - T::one()) };
        let mut y0 = -ten;
        while y0 < T::zero() {
            let mut lowest = T::infinity();
            for k in 0..=20 {
                let x = -ten + T::idx(k);
                lowest = lowest.min(factor(cplx(x, y0))?.norm());
            }
            if lowest > T::lit(1e-9) {
                break;
            }
            y0 += T::lit(0.5);
        }
        let rect = Rect::new(-ten, ten, y0, ten)?;
        let opts = WindingOptions { min_abs: T::min_positive_value(), ..WindingOptions::default() };
        let w = contour::winding(
            |z| {
                // only the phase matters; drop the modulus of A
                let lg = m.gen.log_eval(z)?;
                Ok(cplx(T::zero(), lg.im).exp() * factor(z)?)
            },
            &rect,
            &opts,
        )?;
        let (lo, hi) = (T::lit(2.0), T::lit(20.0));
        let k = 37;
        let ys: Vec<T> = (0..k).map(|j| lo + (hi - lo) * T::idx(j) / T::idx(k - 1)).collect();
        let ls = ys.iter().map(|y| self.log_abs(cplx(T::zero(), *y))).collect::<Result<Vec<T>>>()?;
        let f = fit::line(&ys, &ls).ok_or_else(|| Error::Numerical("growth fit failed".into()))?;
        Ok(LivsicReport { rect, winding: w.winding, slope: f.slope, intercept: f.intercept, residual: f.rms, y_range: (lo, hi) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical_product::TruncationPolicy;
    use crate::perturb_synth::{synthesize, Gate, MassPolicy};
    use crate::spectra::{generate, Family, FamilySpec, Tail};

    fn single(t: f64, w: f64, delta: f64) -> ModelEvaluator<f64> {
        let s = Arc::new(Spectrum::from_points(vec![t], Tail::None, "one").unwrap());
        let g = Arc::new(GeneratingFunction::new(s.clone(), TruncationPolicy::default()).unwrap());
        let d = PerturbationData::new(s, vec![1.0], vec![real(w.sqrt())], vec![real(w.sqrt())], delta).unwrap();
        ModelEvaluator::new(Arc::new(d), g).unwrap()
    }

    fn livsic(n: usize) -> ModelEvaluator<f64> {
        let s = Arc::new(generate(&FamilySpec::new(Family::Livsic { c: 1.0 }, n)).unwrap());
        let g = Arc::new(GeneratingFunction::closed_form(s.clone()).unwrap());
        let d = PerturbationData::livsic_pattern(s, std::f64::consts::FRAC_1_PI).unwrap();
        ModelEvaluator::new(Arc::new(d), g).unwrap()
    }

    #[test]
    fn single_pole_clark_mass() {
        let m = single(2.0, 5.0, 1.0);
        let r = m.clark_mass(0, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!((r.mass - 5.0).abs() < 1e-9, "{}", r.mass);
    }

    #[test]
    fn theta_unimodular_on_axis_and_inner_above() {
        let m = single(2.0, 5.0, 1.0);
        for x in [-3.0, 0.3, 1.9, 2.5, 40.0] {
            assert!((m.theta(real(x)).unwrap().norm() - 1.0).abs() < 1e-12);
        }
        assert!(m.theta(cplx(0.0, 2.0)).unwrap().norm() < 1.0);
        // approaching the node forces Theta to -1
        let th = m.theta(real(2.0 + 1e-9)).unwrap();
        assert!((th + 1.0).norm() < 1e-8);
    }

    #[test]
    fn node_is_refused() {
        let m = single(2.0, 5.0, 1.0);
        assert!(matches!(m.rho(real(2.0)), Err(Error::Proximity { .. })));
    }

    #[test]
    fn livsic_rho_is_tangent() {
        let m = livsic(40);
        for z in [cplx(0.3, 0.2), cplx(-2.2, 1.0), cplx(4.1, -0.7)] {
            let want = (z * std::f64::consts::PI).tan();
            assert!((m.rho(z).unwrap() - want).norm() < 1e-10, "{z}");
        }
    }

    #[test]
    fn livsic_g_is_exponential() {
        let m = livsic(40);
        let g = m.livsic_g().unwrap();
        for z in [cplx(1.0, 1.0), cplx(-3.3, 0.5), cplx(2.0, -4.0), cplx(0.0, 5.0)] {
            let want = -(cplx(0.0, -std::f64::consts::PI) * z).exp();
            assert!((g.eval(z).unwrap() - want).norm() <= 1e-9 * want.norm().max(1.0), "{z}");
        }
        let r = g.report().unwrap();
        assert_eq!(r.winding, 0);
        assert!((r.slope / std::f64::consts::PI - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pattern_is_enforced() {
        let m = single(2.0, 5.0, 1.0);
        assert!(matches!(m.livsic_g(), Err(Error::Pattern(_))));
    }

    #[test]
    fn beta_poles_counted_for_livsic() {
        // beta = -1 + i tan(pi z) has no zeros; 20 poles sit inside
        let m = livsic(40);
        // beta decays like e^{2 pi y} below the axis, so keep the lower side near it
        let r = m.count_zeros(Some(Rect::new(-10.0, 10.0, -2.0, 10.0).unwrap()), false).unwrap();
        assert_eq!((r.poles, r.winding, r.zeros), (20, -20, 0));
    }

    #[test]
    fn constant_beta_has_no_zeros() {
        let s = Arc::new(generate(&FamilySpec::new(Family::Squares { n0: 1 }, 30)).unwrap());
        let g = Arc::new(GeneratingFunction::closed_form(s.clone()).unwrap());
        let n = s.len();
        let d = PerturbationData::new(s, vec![1.0; n], vec![real(0.0); n], vec![real(1.0); n], 1.0).unwrap();
        let m = ModelEvaluator::new(Arc::new(d), g).unwrap();
        let r = m.count_zeros(None, false).unwrap();
        assert_eq!((r.poles, r.winding, r.zeros), (0, 0, 0));
        assert_eq!(m.beta(cplx(3.0, 1.0)).unwrap(), real(1.0));
    }

    #[test]
    fn default_rect_stays_where_truncation_is_resolved() {
        let s = Arc::new(generate(&FamilySpec::<f64>::new(Family::Squares { n0: 1 }, 2000)).unwrap());
        let g = Arc::new(GeneratingFunction::closed_form(s).unwrap());
        let d = synthesize(&g, MassPolicy::Unit, Gate::Force).unwrap();
        let m = ModelEvaluator::new(Arc::new(d), g).unwrap();
        let r = m.default_rect();
        assert!(r.y1 >= 1.0 && r.y1 < 100.0, "{r:?}");
        assert_eq!(m.count_zeros(None, false).unwrap().zeros, 0);
    }

    #[test]
    fn synthesized_squares_beta_is_reciprocal() {
        let s = Arc::new(generate(&FamilySpec::new(Family::Squares { n0: 1 }, 2000)).unwrap());
        let g = Arc::new(GeneratingFunction::closed_form(s).unwrap());
        let d = synthesize(&g, MassPolicy::Unit, Gate::Force).unwrap();
        let m = ModelEvaluator::new(Arc::new(d), g).unwrap();
        for z in [cplx(0.0, 1.0), cplx(3.0, 2.0), cplx(-5.0, 0.5)] {
            // the neglected alternating tail is about |z|/N^2
            let tol = 4.0 * z.norm() / 2000.0f64.powi(2);
            let a = m.a(z).unwrap();
            assert!((m.beta(z).unwrap() - a.inv()).norm() < tol, "{z}");
            assert!((m.phi(z).unwrap() * m.e(z).unwrap() - 1.0).norm() < tol * a.norm().max(1.0));
        }
    }

    #[test]
    fn hermite_biehler_pieces() {
        let s = Arc::new(generate(&FamilySpec::new(Family::Squares { n0: 1 }, 200)).unwrap());
        let g = Arc::new(GeneratingFunction::closed_form(s).unwrap());
        let d = synthesize(&g, MassPolicy::AbsC, Gate::Force).unwrap();
        let m = ModelEvaluator::new(Arc::new(d), g).unwrap();
        for z in [cplx(0.7, 0.4), cplx(-3.0, 2.0), cplx(10.0, 6.0)] {
            let (e, es) = (m.e(z).unwrap(), m.e_star(z).unwrap());
            assert!(e.norm() > es.norm());
            assert!((es / e - m.theta(z).unwrap()).norm() < 1e-10);
        }
        for x in [0.5, 2.5, 7.0] {
            let (e, es): (C<f64>, C<f64>) = (m.e(real(x)).unwrap(), m.e_star(real(x)).unwrap());
            let a = (e + es) * 0.5;
            let b = (es - e) / cplx(0.0, 2.0);
            assert!(a.im.abs() < 1e-10 * a.norm().max(1.0) && b.im.abs() < 1e-10 * b.norm().max(1.0));
        }
    }
}
