//! Inductive reweighting of a Hermite–Biehler function `E = A (1 - i r0 - i sum nu_n (...))`.
//!
//! Step `k` lowers the weight at one far node `t_{n_k}` from `nu_{n_k}` to `nu'_k` and fixes a
//! threshold `tau_k`, keeping `1/((x+i)E_k)` uniformly bounded in `L^2(R)` while `1/E_k` picks
//! up at least `1/2` of `L^2` norm on every annulus `J_k \ J_{k-1}`, `J_k = [-tau_k, tau_k]`.
//!
//! Norms are computed by Gauss–Kronrod (7/15) quadrature on the gaps between nodes. The panels
//! and the integrand ingredients at their nodes are cached for the initial weights; later states
//! differ from it at finitely many nodes, so re-evaluation costs `O(k)` per cached node, and a
//! panel is refined afresh only when its error estimate degrades.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical_product::GeneratingFunction;
use crate::error::{Error, Result};
use crate::fit;
use crate::scalar::{real, Real, C};
use crate::spectra::{Side, Spectrum};
use crate::tails::{TailOrder, TailSums, WeightLaw};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_DEPTH: usize = 48;
/// Growth threshold for `||1/E_k||` on `J_k \ J_{k-1}` (the limit value is `1/2`).
pub const GROWTH_FLOOR: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuStarConfig<T> {
    /// Relative tolerance of each quadrature panel.
    pub quad_tol: T,
    /// Relative tolerance for the norm equalities.
    pub match_tol: T,
    /// Law points added past the materialized nodes before extrapolating.
    pub virtual_gaps: usize,
    /// Trailing gaps used to fit the power decay of the remainder.
    pub fit_gaps: usize,
    pub max_steps: usize,
}

impl<T: Real> Default for NuStarConfig<T> {
    fn default() -> Self {
        NuStarConfig { quad_tol: T::lit(1e-9), match_tol: T::lit(1e-6), virtual_gaps: 256, fit_gaps: 48, max_steps: 6 }
    }
}

/// Which `L^2` norm: of `1/((x+i)E)` or of `1/E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Weighted,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "region", rename_all = "snake_case")]
pub enum Region<T> {
    /// `R \ [-tau, tau]`.
    Outside { tau: T },
    /// `[-outer, -inner] u [inner, outer]`.
    Annulus { inner: T, outer: T },
    /// `[-tau, tau]`.
    Window { tau: T },
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCase {
    /// The outer norm was already large enough; `nu'_k = nu_{n_k}`.
    Kept,
    /// `nu'_k` was bisected to meet the outer norm.
    Bisected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog<T> {
    pub k: usize,
    /// Position of `t_{n_k}` in the spectrum, and its rank on its side.
    pub position: usize,
    pub rank: usize,
    pub t: T,
    pub nu: T,
    pub nu_prime: T,
    pub case: StepCase,
    pub tau: T,
    /// `tau_k` was placed mid-gap after `t_{n_k}` because the annulus norm already
    /// exceeded `1/tau_{k-1}` at `t_{n_k}`.
    pub tau_overshoot: bool,
    pub outer_norm_before: T,
    pub outer_norm: T,
    pub annulus_norm: T,
    pub growth_norm: T,
    pub line_norm: T,
    pub line_bound: T,
    pub doubling_ok: bool,
    pub mass_ok: bool,
    pub property_i_ok: bool,
    pub property_ii_ok: bool,
    pub growth_ok: bool,
    pub pointwise_ok: bool,
}

impl<T> StepLog<T> {
    pub fn all_ok(&self) -> bool {
        self.doubling_ok && self.mass_ok && self.property_i_ok && self.property_ii_ok && self.growth_ok && self.pointwise_ok
    }
}

/// Serializable snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuStarState<T> {
    pub k: usize,
    pub side: Side,
    pub r0: T,
    pub taus: Vec<T>,
    pub initial_norm: T,
    pub steps: Vec<StepLog<T>>,
}

#[derive(Debug, Clone, Copy)]
struct Node<T> {
    x: T,
    ln_a2: T,
    rho: T,
}

#[derive(Debug, Clone)]
struct Panel<T> {
    a: T,
    b: T,
    gap: usize,
    floor: T,
    nodes: [Node<T>; 15],
}

#[derive(Debug, Clone, Copy)]
struct Gap<T> {
    a: T,
    b: T,
    /// `m + shift` of the law point at the gap's inner end, for tail fitting.
    law_x: Option<T>,
}

/// The construction state.
#[derive(Debug, Clone)]
pub struct NuStar<T> {
    spectrum: Arc<Spectrum<T>>,
    gen: Arc<GeneratingFunction<T>>,
    nu0: Vec<T>,
    tails: TailSums<T>,
    r0: T,
    side: Side,
    config: NuStarConfig<T>,
    gaps: Vec<Gap<T>>,
    panels: Vec<Panel<T>>,
    /// Sides whose last gaps follow the tail law (remainder extrapolated).
    law_sides: Vec<Side>,
    mods: Vec<(usize, T)>,
    taus: Vec<T>,
    initial_norm: T,
    steps: Vec<StepLog<T>>,
}

impl<T: Real> NuStar<T> {
    /// Starts the construction. `nu0` are the weights of the materialized nodes, `tail` the
    /// weight laws on the negative and positive tails.
    pub fn init(
        gen: Arc<GeneratingFunction<T>>,
        nu0: Vec<T>,
        tail: (Option<WeightLaw<T>>, Option<WeightLaw<T>>),
        r0: T,
        config: NuStarConfig<T>,
    ) -> Result<Self> {
        let spectrum = gen.spectrum().clone();
        if nu0.len() != spectrum.len() {
            return Err(Error::Initialization(format!("{} weights for {} nodes", nu0.len(), spectrum.len())));
        }
        if nu0.iter().all(|v| *v == T::zero()) {
            return Err(Error::Initialization("all weights vanish; there is nothing to reweight".into()));
        }
        if let Some(i) = nu0.iter().position(|v| !(*v > T::zero() && v.is_finite())) {
            return Err(Error::Initialization(format!("weight at position {i} is not positive")));
        }
        if !r0.is_finite() {
            return Err(Error::Initialization("r0 must be finite".into()));
        }
        for (side, w) in [(Side::Negative, tail.0), (Side::Positive, tail.1)] {
            if let (Some(law), Some(w)) = (spectrum.tail.law(side), w) {
                if !(w.coeff.re > T::zero() && w.coeff.im == T::zero()) {
                    return Err(Error::Initialization(format!("{} tail weight must be positive", side.name())));
                }
                // sum nu/t^2 over the tail needs power - 2 growth < -1
                if w.power - law.growth - law.growth >= -T::one() {
                    return Err(Error::Initialization(format!("sum nu/t^2 diverges on the {} tail", side.name())));
                }
            }
        }
        let side = if spectrum.tail.law(Side::Positive).is_some() || spectrum.count_on(Side::Positive) >= spectrum.count_on(Side::Negative) {
            Side::Positive
        } else {
            Side::Negative
        };
        let first = spectrum
            .points
            .iter()
            .filter(|t| Side::of(**t) == side)
            .map(|t| t.abs())
            .fold(T::infinity(), |m, v| m.min(v));
        if !first.is_finite() {
            return Err(Error::Initialization("no nodes on either side".into()));
        }
        let tau0 = T::lit(4.0).max(first + first) + T::one();
        let tails = TailSums::with_weights(&spectrum.tail, tail.0, tail.1, gen.policy().pairing);
        let mut me = NuStar {
            spectrum,
            gen,
            nu0,
            tails,
            r0,
            side,
            config,
            gaps: Vec::new(),
            panels: Vec::new(),
            law_sides: Vec::new(),
            mods: Vec::new(),
            taus: vec![tau0],
            initial_norm: T::zero(),
            steps: Vec::new(),
        };
        me.build_cache()?;
        let n0 = me.norm(Region::Line, NormKind::Weighted)?;
        if !n0.is_finite() {
            return Err(Error::Initialization("1/((x+i)E) is not square integrable".into()));
        }
        me.initial_norm = n0;
        Ok(me)
    }

    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn taus(&self) -> &[T] {
        &self.taus
    }

    pub fn steps(&self) -> &[StepLog<T>] {
        &self.steps
    }

    pub fn initial_norm(&self) -> T {
        self.initial_norm
    }

    pub fn state(&self) -> NuStarState<T> {
        NuStarState { k: self.k(), side: self.side, r0: self.r0, taus: self.taus.clone(), initial_norm: self.initial_norm, steps: self.steps.clone() }
    }

    /// Current weight at a materialized position.
    pub fn weight(&self, pos: usize) -> T {
        self.mods.iter().rev().find(|(p, _)| *p == pos).map(|(_, v)| *v).unwrap_or(self.nu0[pos])
    }

    fn ln_a2(&self, x: T) -> Result<T> {
        let l = self.gen.log_eval(real(x))?.re;
        Ok(l + l)
    }

    /// `r0 + sum nu0_n (1/(t_n - x) - 1/t_n)` including the tail.
    fn rho0(&self, x: T) -> Result<T> {
        let mut s = self.r0;
        for (t, nu) in self.spectrum.points.iter().zip(&self.nu0) {
            s += *nu * x / (*t * (*t - x));
        }
        if !self.tails.is_empty() {
            s += self.tails.resolvent_sum(real(x), TailOrder::Exact)?.value.re;
        }
        Ok(s)
    }

    fn node(&self, x: T) -> Result<Node<T>> {
        Ok(Node { x, ln_a2: self.ln_a2(x)?, rho: self.rho0(x)? })
    }

    fn density(&self, n: &Node<T>, mods: &[(usize, T)], kind: NormKind) -> T {
        let mut rho = n.rho;
        for (p, v) in mods {
            let t = self.spectrum.points[*p];
            rho += (*v - self.nu0[*p]) * n.x / (t * (t - n.x));
        }
        let ln_eta2 = if rho.abs() > T::lit(1e8) { T::lit(2.0) * rho.abs().ln() + (T::one() / (rho * rho)).ln_1p() } else { (rho * rho).ln_1p() };
        let v = (-n.ln_a2 - ln_eta2).exp();
        match kind {
            NormKind::Weighted => v / (T::one() + n.x * n.x),
            NormKind::Plain => v,
        }
    }

    fn make_panel(&self, a: T, b: T, gap: usize, floor: T) -> Result<Panel<T>> {
        let c = (a + b) * T::lit(0.5);
        let h = (b - a) * T::lit(0.5);
        let mut xs = [c; 15];
        for j in 0..7 {
            xs[2 * j] = c - h * T::lit(XGK[j]);
            xs[2 * j + 1] = c + h * T::lit(XGK[j]);
        }
        let mut nodes = [Node { x: c, ln_a2: T::zero(), rho: T::zero() }; 15];
        for (k, x) in xs.iter().enumerate() {
            nodes[k] = self.node(*x)?;
        }
        Ok(Panel { a, b, gap, floor, nodes })
    }

    fn estimate(&self, p: &Panel<T>, mods: &[(usize, T)], kind: NormKind) -> (T, T) {
        let f: Vec<T> = p.nodes.iter().map(|n| self.density(n, mods, kind)).collect();
        let h = (p.b - p.a) * T::lit(0.5);
        let mut k = T::lit(WGK[7]) * f[14];
        for j in 0..7 {
            k += T::lit(WGK[j]) * (f[2 * j] + f[2 * j + 1]);
        }
        let g = T::lit(WG[0]) * (f[2] + f[3]) + T::lit(WG[1]) * (f[6] + f[7]) + T::lit(WG[2]) * (f[10] + f[11]) + T::lit(WG[3]) * f[14];
        (k * h, g * h)
    }

    fn accepts(&self, k: T, g: T, floor: T) -> bool {
        let e = (k - g).abs();
        e <= self.config.quad_tol * k.abs() || e <= floor
    }

    /// Adaptive integral over `[a, b]`; returns the value and, if asked, the leaf panels.
    fn adapt(&self, a: T, b: T, gap: usize, floor: Option<T>, mods: &[(usize, T)], kind: NormKind, keep: bool) -> Result<(T, Vec<Panel<T>>)> {
        let mut out = Vec::new();
        let mut total = T::zero();
        let first = self.make_panel(a, b, gap, T::zero())?;
        let floor = floor.unwrap_or_else(|| self.estimate(&first, mods, kind).0.abs() * self.config.quad_tol * T::lit(1e-2));
        let mut stack = vec![(first, 0usize)];
        while let Some((mut p, depth)) = stack.pop() {
            p.floor = floor;
            let (k, g) = self.estimate(&p, mods, kind);
            if self.accepts(k, g, floor) {
                total += k;
                if keep {
                    out.push(p);
                }
                continue;
            }
            if depth >= MAX_DEPTH {
                return Err(Error::Quadrature(format!(
                    "panel [{}, {}] not converged: Kronrod {:e}, Gauss {:e}",
                    p.a.as_f64(),
                    p.b.as_f64(),
                    k.as_f64(),
                    g.as_f64()
                )));
            }
            let m = (p.a + p.b) * T::lit(0.5);
            // push the right half first so panels come out in ascending order
            stack.push((self.make_panel(m, p.b, gap, floor)?, depth + 1));
            stack.push((self.make_panel(p.a, m, gap, floor)?, depth + 1));
        }
        Ok((total, out))
    }

    fn build_cache(&mut self) -> Result<()> {
        let s = &self.spectrum;
        let mut cuts: Vec<(T, Option<T>)> = s.points.iter().map(|t| (*t, None)).collect();
        let mut law_sides = Vec::new();
        for side in [Side::Negative, Side::Positive] {
            let sg: T = side.sign();
            if let Some(law) = s.tail.law(side) {
                law_sides.push(side);
                for j in 0..=self.config.virtual_gaps as u64 {
                    let m = law.next + j;
                    cuts.push((sg * law.magnitude(m), Some(T::from_u64(m).unwrap() + law.shift)));
                }
            }
        }
        if s.position_of(T::zero()).is_none() {
            cuts.push((T::zero(), None));
        }
        cuts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        cuts.dedup_by(|a, b| a.0 == b.0);
        // materialized nodes next to law points keep the law coordinate of the point after them
        let mut gaps = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let side = if b.0 <= T::zero() { Some(Side::Negative) } else if a.0 >= T::zero() { Some(Side::Positive) } else { None };
            let law_x = match side {
                Some(Side::Positive) => a.1,
                Some(Side::Negative) => b.1,
                None => None,
            };
            gaps.push(Gap { a: a.0, b: b.0, law_x });
        }
        let built: Vec<Result<(T, Vec<Panel<T>>)>> =
            gaps.par_iter().enumerate().map(|(i, g)| self.adapt(g.a, g.b, i, None, &[], NormKind::Weighted, true)).collect();
        let mut total = T::zero();
        let mut parts = Vec::with_capacity(gaps.len());
        for b in built {
            let (v, p) = b?;
            total += v;
            parts.push(p);
        }
        // sides without a law: doubling panels until a gap no longer contributes
        let mut ext: [Vec<(Gap<T>, Vec<Panel<T>>)>; 2] = [Vec::new(), Vec::new()];
        for (e, side) in [Side::Negative, Side::Positive].into_iter().enumerate() {
            if law_sides.contains(&side) {
                continue;
            }
            let sg: T = side.sign();
            let mut edge = if e == 0 { gaps[0].a } else { gaps[gaps.len() - 1].b };
            if edge * sg <= T::zero() {
                edge = sg;
            }
            for _ in 0..64 {
                let next = edge + edge;
                let (a, b) = if e == 0 { (next, edge) } else { (edge, next) };
                let (v, p) = self.adapt(a, b, 0, None, &[], NormKind::Weighted, true)?;
                total += v;
                ext[e].push((Gap { a, b, law_x: None }, p));
                edge = next;
                if v <= self.config.quad_tol * total {
                    break;
                }
            }
        }
        let mut all: Vec<(Gap<T>, Vec<Panel<T>>)> = ext[0].drain(..).rev().collect();
        all.extend(gaps.into_iter().zip(parts));
        all.extend(ext[1].drain(..));
        let mut gaps = Vec::with_capacity(all.len());
        let mut panels = Vec::new();
        for (i, (g, ps)) in all.into_iter().enumerate() {
            gaps.push(g);
            panels.extend(ps.into_iter().map(|mut p| {
                p.gap = i;
                p
            }));
        }
        self.gaps = gaps;
        self.panels = panels;
        self.law_sides = law_sides;
        Ok(())
    }

    fn panel_value(&self, p: &Panel<T>, mods: &[(usize, T)], kind: NormKind) -> Result<T> {
        let (k, g) = self.estimate(p, mods, kind);
        if self.accepts(k, g, p.floor) {
            Ok(k)
        } else {
            Ok(self.adapt(p.a, p.b, p.gap, Some(p.floor), mods, kind, false)?.0)
        }
    }

    /// Integral over `[lo, hi]` (finite, inside the cached range).
    fn integrate(&self, lo: T, hi: T, mods: &[(usize, T)], kind: NormKind) -> Result<T> {
        let (first, last) = (self.panels[0].a, self.panels[self.panels.len() - 1].b);
        // past the doubling panels of a side without a law the integrand is negligible
        let lo = if self.law_sides.contains(&Side::Negative) { lo } else { lo.max(first) };
        let hi = if self.law_sides.contains(&Side::Positive) { hi } else { hi.min(last) };
        if hi <= lo {
            return Ok(T::zero());
        }
        if lo < first || hi > last {
            return Err(Error::Materialization(format!(
                "interval [{}, {}] leaves the integrated range [{}, {}]",
                lo.as_f64(),
                hi.as_f64(),
                first.as_f64(),
                last.as_f64()
            )));
        }
        let start = self.panels.partition_point(|p| p.b <= lo);
        let stop = self.panels.partition_point(|p| p.a < hi);
        let parts: Vec<Result<T>> = self.panels[start..stop]
            .par_iter()
            .map(|p| {
                if p.a >= lo && p.b <= hi {
                    self.panel_value(p, mods, kind)
                } else {
                    Ok(self.adapt(p.a.max(lo), p.b.min(hi), p.gap, Some(p.floor), mods, kind, false)?.0)
                }
            })
            .collect();
        let mut total = T::zero();
        for v in parts {
            total += v?;
        }
        Ok(total)
    }

    /// Extrapolated integral beyond the cached range on one side.
    fn remainder(&self, side: Side, mods: &[(usize, T)], kind: NormKind) -> Result<T> {
        if !self.law_sides.contains(&side) {
            return Ok(T::zero());
        }
        let idx: Vec<usize> = match side {
            Side::Positive => (0..self.gaps.len()).rev().take(self.config.fit_gaps).collect(),
            Side::Negative => (0..self.config.fit_gaps.min(self.gaps.len())).collect(),
        };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &i in &idx {
            let g = self.gaps[i];
            let Some(lx) = g.law_x else { continue };
            let lo = self.panels.partition_point(|p| p.gap < i);
            let hi = self.panels.partition_point(|p| p.gap <= i);
            let mut v = T::zero();
            for p in &self.panels[lo..hi] {
                v += self.panel_value(p, mods, kind)?;
            }
            if v > T::zero() {
                // the gap spans law coordinates [lx, lx + 1]; midpoint rule
                xs.push((lx + T::lit(0.5)).ln());
                ys.push(v.ln());
            }
        }
        let f = fit::line(&xs, &ys).ok_or_else(|| Error::Quadrature(format!("cannot fit the {} tail decay", side.name())))?;
        let p = -f.slope;
        if !(p > T::lit(1.02)) {
            return Err(Error::Quadrature(format!("{} tail decays like m^-{:.3}; not integrable", side.name(), p.as_f64())));
        }
        let outer = xs.iter().copied().fold(T::neg_infinity(), |m, v| m.max(v)).exp();
        let m = outer + T::lit(0.5);
        // later gaps have midpoints outer + 1, outer + 2, ...
        Ok(f.intercept.exp() * m.powf(T::one() - p) / (p - T::one()))
    }

    fn norm_with(&self, region: Region<T>, mods: &[(usize, T)], kind: NormKind) -> Result<T> {
        let (first, last) = (self.panels[0].a, self.panels[self.panels.len() - 1].b);
        let v = match region {
            Region::Line => {
                self.integrate(first, last, mods, kind)? + self.remainder(Side::Negative, mods, kind)? + self.remainder(Side::Positive, mods, kind)?
            }
            Region::Outside { tau } => {
                self.integrate(first, -tau, mods, kind)?
                    + self.integrate(tau, last, mods, kind)?
                    + self.remainder(Side::Negative, mods, kind)?
                    + self.remainder(Side::Positive, mods, kind)?
            }
            Region::Annulus { inner, outer } => self.integrate(-outer, -inner, mods, kind)? + self.integrate(inner, outer, mods, kind)?,
            Region::Window { tau } => self.integrate(-tau, tau, mods, kind)?,
        };
        Ok(v.sqrt())
    }

    /// `L^2` norm of `1/((x+i)E_k)` or `1/E_k` over a region, for the current state.
    pub fn norm(&self, region: Region<T>, kind: NormKind) -> Result<T> {
        self.norm_with(region, &self.mods, kind)
    }

    fn with_mod(&self, pos: usize, v: T) -> Vec<(usize, T)> {
        let mut m = self.mods.clone();
        m.push((pos, v));
        m
    }

    /// `(position, rank)` of the smallest node beyond `2 tau` on the working side obeying
    /// `nu t^-2 <= 2^{-k-1}/tau`, with a materialized successor.
    fn choose_node(&self, k: usize, tau: T) -> Result<(usize, usize)> {
        let s = &self.spectrum;
        let mut order: Vec<usize> = (0..s.len()).filter(|&i| Side::of(s.points[i]) == self.side).collect();
        order.sort_by(|a, b| s.points[*a].abs().partial_cmp(&s.points[*b].abs()).unwrap());
        let bound = T::lit(0.5).powi(k as i32 + 1) / tau;
        for (r, &i) in order.iter().enumerate() {
            let t = s.points[i].abs();
            if t > tau + tau && self.nu0[i] / (t * t) <= bound && r + 1 < order.len() {
                return Ok((i, r + 1));
            }
        }
        Err(Error::Materialization(format!("no materialized node beyond {} meets the mass inequality at step {k}", (tau + tau).as_f64())))
    }

    fn next_on_side(&self, t: T) -> Option<T> {
        self.spectrum.points.iter().filter(|x| Side::of(**x) == self.side && x.abs() > t.abs()).map(|x| x.abs()).fold(None, |m, v| Some(m.map_or(v, |m: T| m.min(v))))
    }

    /// One inductive step.
    pub fn step(&mut self) -> Result<&StepLog<T>> {
        let k = self.k() + 1;
        if k > self.config.max_steps {
            return Err(Error::param("steps", format!("at most {} steps", self.config.max_steps)));
        }
        let tau_prev = self.taus[k - 1];
        let (pos, rank) = self.choose_node(k, tau_prev)?;
        let t = self.spectrum.points[pos];
        let nu = self.nu0[pos];
        let target = T::lit(2.0) / tau_prev;
        let outer_before = self.norm(Region::Outside { tau: tau_prev }, NormKind::Weighted)?;
        let (nu_prime, case) = if outer_before >= target {
            (nu, StepCase::Kept)
        } else {
            (self.bisect_weight(pos, nu, tau_prev, target)?, StepCase::Bisected)
        };
        self.mods.push((pos, nu_prime));
        let outer = self.norm(Region::Outside { tau: tau_prev }, NormKind::Weighted)?;
        let (tau, overshoot) = self.choose_tau(t.abs(), tau_prev)?;
        self.taus.push(tau);
        let annulus = self.norm(Region::Annulus { inner: tau_prev, outer: tau }, NormKind::Weighted)?;
        let growth = self.norm(Region::Annulus { inner: tau_prev, outer: tau }, NormKind::Plain)?;
        let line = self.norm(Region::Line, NormKind::Weighted)?;
        let prod = (1..=k).fold(T::one(), |p, j| {
            let f = T::one() + T::lit(0.5).powi(j as i32);
            p * f * f
        });
        let bound2 = prod * (T::one() + self.initial_norm * self.initial_norm) - T::one();
        let slack = T::one() + T::lit(1e-6);
        let property_ii_ok = T::one() + line * line <= (T::one() + bound2) * slack;
        let ta = t.abs();
        let mass_ok = nu / (ta * ta) <= T::lit(0.5).powi(k as i32 + 1) / tau_prev;
        let doubling_ok = tau > tau_prev + tau_prev && ta > tau_prev + tau_prev;
        // sup over J_j of |eta_k - eta_{k-1}| = (nu - nu') tau_j / (|t| (|t| - tau_j)), j < k
        let property_i_ok = (0..k).all(|j| {
            let tj = self.taus[j];
            (nu - nu_prime) * tj / (ta * (ta - tj)) <= T::lit(0.5).powi(k as i32)
        });
        let pointwise_ok = self.pointwise_proxy()?;
        self.steps.push(StepLog {
            k,
            position: pos,
            rank,
            t,
            nu,
            nu_prime,
            case,
            tau,
            tau_overshoot: overshoot,
            outer_norm_before: outer_before,
            outer_norm: outer,
            annulus_norm: annulus,
            growth_norm: growth,
            line_norm: line,
            line_bound: bound2.sqrt(),
            doubling_ok,
            mass_ok,
            property_i_ok,
            property_ii_ok,
            growth_ok: growth >= T::lit(GROWTH_FLOOR),
            pointwise_ok,
        });
        Ok(self.steps.last().unwrap())
    }

    /// Runs `n` steps and returns the log of all executed steps.
    pub fn run(&mut self, n: usize) -> Result<&[StepLog<T>]> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(&self.steps)
    }

    fn bisect_weight(&self, pos: usize, nu: T, tau: T, target: T) -> Result<T> {
        let region = Region::Outside { tau };
        let f = |v: T| self.norm_with(region, &self.with_mod(pos, v), NormKind::Weighted);
        let mut hi = nu;
        let mut lo = nu;
        let mut samples = Vec::new();
        let mut found = false;
        for _ in 0..80 {
            lo = lo * T::lit(0.1);
            let v = f(lo)?;
            samples.push((lo.as_f64(), v.as_f64()));
            if v >= target {
                found = true;
                break;
            }
            hi = lo;
        }
        if !found {
            return Err(Error::Bracket(format!("outer norm never reaches {:e}; samples (nu', norm): {samples:?}", target.as_f64())));
        }
        // norm decreases in nu'; bisect on ln nu'
        for _ in 0..200 {
            let mid = (lo.ln() + hi.ln()).exp2_half();
            let v = f(mid)?;
            if (v - target).abs() <= self.config.match_tol * target {
                return Ok(mid);
            }
            if v > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= T::epsilon() * hi {
                return Ok(mid);
            }
        }
        Ok((lo * hi).sqrt())
    }

    fn choose_tau(&self, t: T, tau_prev: T) -> Result<(T, bool)> {
        let target = T::one() / tau_prev;
        let g = |tau: T| self.norm(Region::Annulus { inner: tau_prev, outer: tau }, NormKind::Weighted);
        if g(t)? >= target {
            let next = self.next_on_side(t).ok_or_else(|| Error::Materialization("no node after t_{n_k}".into()))?;
            return Ok(((t + next) * T::lit(0.5), true));
        }
        let last = self.panels[self.panels.len() - 1].b.min(-self.panels[0].a);
        let mut lo = t;
        let mut hi = t;
        loop {
            hi = (hi + hi).min(last);
            if g(hi)? >= target {
                break;
            }
            if hi >= last {
                return Err(Error::Materialization(format!("annulus norm stays below {:e} up to {}", target.as_f64(), last.as_f64())));
            }
            lo = hi;
        }
        for _ in 0..200 {
            let mid = (lo + hi) * T::lit(0.5);
            let v = g(mid)?;
            if (v - target).abs() <= self.config.match_tol * target || hi - lo <= T::epsilon() * hi {
                return Ok((mid, false));
            }
            if v > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(((lo + hi) * T::lit(0.5), false))
    }

    /// `1/E_l` at real `x` for the state after `l` steps.
    fn inv_e(&self, x: T, l: usize) -> Result<C<T>> {
        let n = self.node(x)?;
        let mut rho = n.rho;
        for (p, v) in &self.mods[..l] {
            let t = self.spectrum.points[*p];
            rho += (*v - self.nu0[*p]) * x / (t * (t - x));
        }
        let eta = C::new(T::one(), -rho);
        let a = (n.ln_a2 * T::lit(0.5)).exp();
        let sign = self.gen.eval(real(x))?;
        let a = if sign.re < T::zero() { -a } else { a };
        Ok((eta * a).inv())
    }

    /// On `J_1`: `|1/E_l - 1/E_m| <= 2^{1 - min(l, m)} sup |1/E_min(l, m)|` for executed `l, m`.
    fn pointwise_proxy(&self) -> Result<bool> {
        let k = self.mods.len();
        if k < 2 || self.taus.len() < 2 {
            return Ok(true);
        }
        let tau1 = self.taus[1];
        let grid: Vec<T> = (0..=400)
            .map(|j| -tau1 + (tau1 + tau1) * (T::idx(j) + T::lit(0.37)) / T::lit(401.0))
            .filter(|x| {
                let t = self.spectrum.points[self.spectrum.nearest(*x)];
                (*x - t).abs() > T::lit(1e-6) * t.abs().max(T::one())
            })
            .collect();
        let vals: Vec<Vec<C<T>>> = (1..=k).map(|l| grid.iter().map(|x| self.inv_e(*x, l)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        for l in 1..=k {
            for m in l + 1..=k {
                let sup = vals[l - 1].iter().fold(T::zero(), |s, v| s.max(v.norm()));
                let bound = T::lit(2.0).powi(1 - l as i32) * sup * (T::one() + T::lit(1e-9));
                if vals[l - 1].iter().zip(&vals[m - 1]).any(|(a, b)| (*a - *b).norm() > bound) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

trait Exp2Half {
    fn exp2_half(self) -> Self;
}

impl<T: Real> Exp2Half for T {
    /// `exp(self / 2)`, the geometric midpoint when `self` is a sum of two logs.
    fn exp2_half(self) -> T {
        (self * T::lit(0.5)).exp()
    }
}

/// Fits `nu = coeff (m + shift)^power` to the outermost `last` weights on one side, reading
/// `m + shift` off the side's tail law. `None` without a law or when the fit is not exact to `1e-8`.
pub fn fit_weight_law<T: Real>(s: &Spectrum<T>, nu: &[T], side: Side, last: usize) -> Option<WeightLaw<T>> {
    let law = s.tail.law(side)?;
    let mut idx: Vec<usize> = (0..s.len()).filter(|&i| Side::of(s.points[i]) == side).collect();
    idx.sort_by(|a, b| s.points[*a].abs().partial_cmp(&s.points[*b].abs()).unwrap());
    let take = &idx[idx.len().saturating_sub(last)..];
    let xs: Vec<T> = take.iter().map(|&i| ((s.points[i].abs() / law.scale).powf(law.order())).ln()).collect();
    let ys: Vec<T> = take.iter().map(|&i| nu[i].ln()).collect();
    let f = fit::line(&xs, &ys)?;
    if f.rms > T::lit(1e-8) {
        return None;
    }
    let p = (f.slope * T::lit(1e6)).round() / T::lit(1e6);
    Some(WeightLaw { coeff: real(f.intercept.exp()), power: p })
}
