//! Finite sections `K = diag(1/t_n) + u v*` of the inverse of the perturbed operator.
//!
//! With `omega_n = conj(v_n) u_n = -c_n/(delta t_n^2)` the characteristic equation is
//! `f(lambda) = 1 + sum omega_n/(s_n - lambda) = 0`, and `f(1/z) = beta_N(z)/delta`,
//! so the eigenvalues are the reciprocals of the zeros of the truncated `beta`.

use nalgebra::{DMatrix, RealField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical_product::GeneratingFunction;
use crate::contour::{self, Rect, WindingOptions};
use crate::error::{Error, Result};
use crate::perturb_synth::PerturbationData;
use crate::scalar::{real, Real, C};

/// Largest section handled by the dense solver.
pub const DENSE_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSection<T> {
    pub n: usize,
    /// Nodes in ascending order.
    pub t: Vec<T>,
    /// Diagonal `s_n = 1/t_n`.
    pub s: Vec<T>,
    pub u: Vec<C<T>>,
    pub v: Vec<C<T>>,
    pub delta: T,
    /// `c_n` of the section's data.
    pub c: Vec<C<T>>,
}

/// Builds the section on the first `n` nodes in truncation order.
pub fn build<T: Real>(data: &PerturbationData<T>, n: usize) -> Result<FiniteSection<T>> {
    if !(data.delta != T::zero()) {
        return Err(Error::param("delta", "must be nonzero for the bounded inverse"));
    }
    let d = if n == data.spectrum.len() { data.clone() } else { data.truncated(n)? };
    let t = d.spectrum.points.clone();
    let s: Vec<T> = t.iter().map(|x| T::one() / *x).collect();
    let inv_delta = T::one() / d.delta;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        let r = d.mu[k].sqrt() / t[k];
        u.push(d.a[k] * (-inv_delta * r));
        v.push(d.b[k] * r);
    }
    Ok(FiniteSection { n, t, s, u, v, delta: d.delta, c: d.c })
}

impl<T: Real> FiniteSection<T> {
    /// `omega_n = conj(v_n) u_n`.
    pub fn omega(&self) -> Vec<C<T>> {
        self.u.iter().zip(&self.v).map(|(u, v)| v.conj() * *u).collect()
    }

    /// `K[i][j] = delta_ij s_i + u_i conj(v_j)`.
    pub fn entry(&self, i: usize, j: usize) -> C<T> {
        let d = if i == j { real(self.s[i]) } else { C::new(T::zero(), T::zero()) };
        d + self.u[i] * self.v[j].conj()
    }

    /// `trace K` from the matrix, and `sum (1/t_n - c_n/(delta t_n^2))` from the data.
    pub fn trace_identity(&self) -> (C<T>, C<T>) {
        let m: C<T> = (0..self.n).fold(C::new(T::zero(), T::zero()), |a, i| a + self.entry(i, i));
        let f = self
            .t
            .iter()
            .zip(&self.c)
            .fold(C::new(T::zero(), T::zero()), |a, (t, c)| a + real(T::one() / *t) - *c / (self.delta * *t * *t));
        (m, f)
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        let mut scale = T::zero();
        for i in 0..self.n {
            scale = scale.max(self.s[i].abs()).max(self.u[i].norm() * self.v[i].norm());
        }
        for i in 0..self.n {
            for j in 0..=i {
                if (self.entry(i, j) - self.entry(j, i).conj()).norm() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// `f(lambda) = 1 + sum omega_n/(s_n - lambda)`.
    pub fn secular(&self, lambda: C<T>) -> C<T> {
        let mut acc = real(T::one());
        for (s, u, v) in self.s.iter().zip(&self.u).zip(&self.v).map(|((s, u), v)| (s, u, v)) {
            acc = acc + v.conj() * *u / (real(*s) - lambda);
        }
        acc
    }

    /// Eigenvalues from the secular equation, sorted like [`sort_spectrum`].
    pub fn eigenvalues_secular(&self) -> Result<Vec<C<T>>> {
        SecularSolver::new(self).solve()
    }

    /// Dense matrix, balanced by the diagonal similarity `d_n = 2^round(log2 sqrt(|v_n|/|u_n|))`.
    pub fn matrix(&self, balanced: bool) -> Result<DMatrix<C<T>>> {
        if self.n > DENSE_LIMIT {
            return Err(Error::TooLarge { n: self.n, limit: DENSE_LIMIT });
        }
        let d: Vec<T> = (0..self.n)
            .map(|k| {
                let (a, b) = (self.u[k].norm(), self.v[k].norm());
                if !balanced || a == T::zero() || b == T::zero() {
                    T::one()
                } else {
                    T::lit(2.0).powf((b / a).sqrt().log2().round())
                }
            })
            .collect();
        Ok(DMatrix::from_fn(self.n, self.n, |i, j| {
            let d0 = if i == j { real(self.s[i]) } else { C::new(T::zero(), T::zero()) };
            d0 + self.u[i] * d[i] * (self.v[j] / d[j]).conj()
        }))
    }
}

impl<T: Real + RealField> FiniteSection<T> {
    /// Eigenvalues from a dense complex Schur decomposition, sorted like [`sort_spectrum`].
    pub fn eigenvalues_dense(&self) -> Result<Vec<C<T>>> {
        let m = self.matrix(true)?;
        let niter = 1000 * self.n.max(1);
        let eps = <T as Real>::lit(f64::EPSILON);
        let Some(schur) = nalgebra::Schur::try_new(m.clone(), eps, niter) else {
            return Err(Error::Numerical(format!("complex Schur did not converge; matrix:\n{m}")));
        };
        let (_, tri) = schur.unpack();
        let mut ev: Vec<C<T>> = (0..self.n).map(|i| tri[(i, i)]).collect();
        sort_spectrum(&mut ev);
        Ok(ev)
    }
}

/// Sorts by modulus, largest first; moduli within `1e-12` relative are ordered by `(Re, Im)`.
pub fn sort_spectrum<T: Real>(ev: &mut [C<T>]) {
    ev.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap_or(std::cmp::Ordering::Equal));
    let tol = T::lit(1e-12);
    let mut i = 0;
    while i < ev.len() {
        let head = ev[i].norm();
        let mut j = i + 1;
        while j < ev.len() && head - ev[j].norm() <= tol * head {
            j += 1;
        }
        ev[i..j].sort_by(|a, b| {
            a.re.partial_cmp(&b.re).unwrap_or(std::cmp::Ordering::Equal).then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
        });
        i = j;
    }
}

/// Pairs two eigenvalue lists greedily by distance and returns the largest deviation,
/// relative to `max(|x|, floor)`. `None` when the lengths differ.
pub fn multiset_deviation<T: Real>(a: &[C<T>], b: &[C<T>], floor: T) -> Option<T> {
    if a.len() != b.len() {
        return None;
    }
    let mut used = vec![false; b.len()];
    let mut worst = T::zero();
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (*x - *y).norm()))
            .min_by(|p, q| p.1.partial_cmp(&q.1).unwrap())?;
        used[k] = true;
        worst = worst.max(d / x.norm().max(floor));
    }
    Some(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell<T> {
    rect: Rect<T>,
    count: usize,
    depth: usize,
}

enum Step<T> {
    Roots(Vec<C<T>>),
    Split(Vec<Cell<T>>),
    Dropped,
}

struct SecularSolver<'a, T> {
    f: &'a FiniteSection<T>,
    /// Positions with nonzero `omega`.
    active: Vec<usize>,
    omega: Vec<C<T>>,
    radius: T,
}

const MAX_DEPTH: usize = 160;
const MAX_CELLS: usize = 400_000;

impl<'a, T: Real> SecularSolver<'a, T> {
    fn new(f: &'a FiniteSection<T>) -> Self {
        let omega = f.omega();
        let zero = C::new(T::zero(), T::zero());
        let active: Vec<usize> = (0..f.n).filter(|&k| omega[k] != zero).collect();
        let smax = f.s.iter().fold(T::zero(), |m, s| m.max(s.abs()));
        let un = f.u.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
        let vn = f.v.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt();
        let radius = (smax + un * vn) * T::lit(1.5) + T::min_positive_value().sqrt();
        SecularSolver { f, active, omega, radius }
    }

    fn eval(&self, l: C<T>) -> C<T> {
        let mut acc = real(T::one());
        for &k in &self.active {
            acc = acc + self.omega[k] / (real(self.f.s[k]) - l);
        }
        acc
    }

    fn poles_in(&self, r: &Rect<T>) -> Vec<usize> {
        self.active.iter().copied().filter(|&k| r.contains(real(self.f.s[k]))).collect()
    }

    fn count(&self, r: &Rect<T>) -> Result<usize> {
        let opts = WindingOptions { min_abs: T::lit(1e-13), max_evaluations: 400_000, ..WindingOptions::default() };
        let w = contour::winding(|z| Ok(self.eval(z)), r, &opts)?;
        let n = w.winding + self.poles_in(r).len() as i64;
        if n < 0 {
            return Err(Error::Resolution(format!("negative root count in {r:?}")));
        }
        Ok(n as usize)
    }

    /// Gap-relative distance from the line `x = c` (vertical) or `y = c` to the poles in `r`.
    fn clear(&self, r: &Rect<T>, vertical: bool, c: T) -> bool {
        let len = if vertical { r.width() } else { r.height() };
        let need = len * T::lit(1e-3);
        self.active.iter().all(|&k| {
            let s = self.f.s[k];
            if vertical {
                !(r.y0 < T::zero() && T::zero() < r.y1) || (s - c).abs() >= need
            } else {
                !(r.x0 < s && s < r.x1) || c.abs() >= need
            }
        })
    }

    /// Newton on `f` times the enclosed pole factors, started at the cell center.
    fn newton(&self, r: &Rect<T>) -> Option<C<T>> {
        let poles = self.poles_in(r);
        let mut l = r.center();
        let size = r.width().max(r.height());
        let tol = T::lit(4.0) * T::epsilon() * (l.norm().max(size)).max(T::epsilon() * self.radius);
        for _ in 0..60 {
            let mut f = real(T::one());
            let mut df = C::new(T::zero(), T::zero());
            for &k in &self.active {
                let inv = (real(self.f.s[k]) - l).inv();
                f = f + self.omega[k] * inv;
                df = df + self.omega[k] * inv * inv;
            }
            if f == C::new(T::zero(), T::zero()) {
                return Some(l);
            }
            let mut ld = df / f;
            for &k in &poles {
                ld = ld - (real(self.f.s[k]) - l).inv();
            }
            let step = ld.inv();
            if !step.re.is_finite() || !step.im.is_finite() {
                return None;
            }
            l = l - step;
            let slack = size * T::lit(1e-9);
            if l.re < r.x0 - slack || l.re > r.x1 + slack || l.im < r.y0 - slack || l.im > r.y1 + slack {
                return None;
            }
            if step.norm() <= tol {
                return Some(l);
            }
        }
        None
    }

    fn split(&self, cell: &Cell<T>) -> Result<Vec<Cell<T>>> {
        let r = cell.rect;
        let vertical = r.width() >= r.height();
        let (lo, hi) = if vertical { (r.x0, r.x1) } else { (r.y0, r.y1) };
        let len = hi - lo;
        let mut last_err = None;
        for k in 0..24 {
            let shift = T::idx((k + 1) / 2) * T::lit(0.0371) * if k % 2 == 0 { T::one() } else { -T::one() };
            let c = lo + len * (T::lit(0.5) + shift);
            if !self.clear(&r, vertical, c) {
                continue;
            }
            let (a, b) = if vertical {
                (Rect { x1: c, ..r }, Rect { x0: c, ..r })
            } else {
                (Rect { y1: c, ..r }, Rect { y0: c, ..r })
            };
            match (self.count(&a), self.count(&b)) {
                (Ok(na), Ok(nb)) if na + nb == cell.count => {
                    return Ok([(a, na), (b, nb)]
                        .into_iter()
                        .filter(|(_, n)| *n > 0)
                        .map(|(rect, count)| Cell { rect, count, depth: cell.depth + 1 })
                        .collect());
                }
                (Err(e), _) | (_, Err(e)) => last_err = Some(e),
                _ => last_err = Some(Error::Resolution(format!("root counts disagree when splitting {r:?}"))),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::Resolution(format!("no admissible split for {r:?}"))))
    }

    fn step(&self, cell: &Cell<T>) -> Result<Step<T>> {
        if cell.count == 0 {
            return Ok(Step::Dropped);
        }
        let r = cell.rect;
        if cell.count == 1 {
            if let Some(l) = self.newton(&r) {
                return Ok(Step::Roots(vec![l]));
            }
        }
        let size = r.width().max(r.height());
        if size <= T::lit(64.0) * T::epsilon() * self.radius {
            // a cluster below resolution: report the center with its multiplicity
            return Ok(Step::Roots(vec![r.center(); cell.count]));
        }
        if cell.depth >= MAX_DEPTH {
            return Err(Error::Resolution(format!("unresolved box {r:?} holding {} roots", cell.count)));
        }
        Ok(Step::Split(self.split(cell)?))
    }

    fn solve(&self) -> Result<Vec<C<T>>> {
        let zero = C::new(T::zero(), T::zero());
        let mut out: Vec<C<T>> = (0..self.f.n).filter(|&k| self.omega[k] == zero).map(|k| real(self.f.s[k])).collect();
        if !self.active.is_empty() {
            let rect = Rect::square(self.radius);
            let total = self.count(&rect)?;
            if total != self.active.len() {
                return Err(Error::Resolution(format!("{total} roots counted, {} expected", self.active.len())));
            }
            let mut level = vec![Cell { rect, count: total, depth: 0 }];
            let mut visited = 0usize;
            while !level.is_empty() {
                visited += level.len();
                if visited > MAX_CELLS {
                    let boxes: Vec<String> = level.iter().map(|c| format!("{:?}", c.rect)).collect();
                    return Err(Error::Resolution(format!("root search budget exceeded; unresolved boxes: {}", boxes.join(", "))));
                }
                let steps: Vec<Result<Step<T>>> = level.par_iter().map(|c| self.step(c)).collect();
                let mut next = Vec::new();
                for s in steps {
                    match s? {
                        Step::Roots(r) => out.extend(r),
                        Step::Split(c) => next.extend(c),
                        Step::Dropped => {}
                    }
                }
                level = next;
            }
        }
        sort_spectrum(&mut out);
        Ok(out)
    }
}

/// One row of a collapse profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow<T> {
    #[serde(rename = "N")]
    pub n: usize,
    pub spectral_radius: T,
    /// Eigenvalues with `|lambda| >= 1/window`, i.e. zeros of `beta_N` in `|z| <= window`.
    pub n_zeros_in_window: usize,
}

/// Spectral radii of the sections of sizes `ns` (increasing), computed densely.
pub fn collapse_profile<T: Real + RealField>(data: &PerturbationData<T>, ns: &[usize], window: T) -> Result<Vec<CollapseRow<T>>> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("N", "sizes must be strictly increasing"));
    }
    ns.par_iter()
        .map(|&n| {
            let ev = build(data, n)?.eigenvalues_dense()?;
            let radius = ev.first().map(|l| l.norm()).unwrap_or_else(T::zero);
            let inner = T::one() / window;
            Ok(CollapseRow { n, spectral_radius: radius, n_zeros_in_window: ev.iter().filter(|l| l.norm() >= inner).count() })
        })
        .collect()
}

/// Vertices of the disk polygons used by [`complement_radius`].
const DISK_SIDES: usize = 256;

/// Two-sided bound on the spectral radius of a section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusBracket<T> {
    #[serde(rename = "N")]
    pub n: usize,
    pub lower: T,
    pub upper: T,
    pub n_zeros_in_window: usize,
}

impl<T: Real> RadiusBracket<T> {
    pub fn mid(&self) -> T {
        (self.lower + self.upper) * T::lit(0.5)
    }
}

/// Spectral radius of the `n`-section of synthesized data (`beta = 1/A`, `delta = 1`) from the
/// zeros of `A beta_N = 1 - A sum_{k > N} c_k z/(t_k (t_k - z))`.
///
/// When `c_n` decays fast, `beta_N` is `1/A` up to a remainder far below rounding of the
/// partial-fraction sum, and the dense and secular solvers only see that rounding. Here the
/// remainder is formed directly. The smallest zero modulus is bracketed by bisecting the
/// circumradius of a regular polygon at which the zero count turns positive. Terms beyond the
/// materialized nodes are ignored.
pub fn complement_radius<T: Real>(data: &PerturbationData<T>, gen: &GeneratingFunction<T>, n: usize, window: T) -> Result<RadiusBracket<T>> {
    if !data.flags.synthesized || data.delta != T::one() {
        return Err(Error::param("data", "the complement form needs synthesized data with delta = 1"));
    }
    let s = &data.spectrum;
    if gen.spectrum().points != s.points {
        return Err(Error::param("gen", "generating function and data use different nodes"));
    }
    if n == 0 || n > s.len() {
        return Err(Error::param("N", format!("must lie in 1..={}", s.len())));
    }
    let zero = C::new(T::zero(), T::zero());
    let order = s.truncation_order();
    let rest: Vec<(T, C<T>)> = order[n..].iter().map(|&i| (s.points[i], data.c[i])).filter(|(_, c)| *c != zero).collect();
    let h = |z: C<T>| -> Result<C<T>> {
        let mut sum = zero;
        for (t, c) in &rest {
            sum = sum + *c * z / (real(*t) * (real(*t) - z));
        }
        if sum == zero {
            return Ok(real(T::one()));
        }
        Ok(real(T::one()) - (gen.log_eval(z)? + sum.ln()).exp())
    };
    let cos_k = (T::PI() / T::idx(DISK_SIDES)).cos();
    // keep the axis crossings of the polygon away from the nodes
    let nudge = |mut m: T| {
        for _ in 0..64 {
            let x = m * cos_k;
            let ok = [x, -x].iter().all(|x| {
                let t = s.points[s.nearest(*x)];
                (t - *x).abs() > T::lit(1e-6) * t.abs().max(T::one())
            });
            if ok {
                break;
            }
            m *= T::one() + T::lit(1e-5);
        }
        m
    };
    let count = |m: T| -> Result<(T, usize)> {
        let mut m = nudge(m);
        let opts = WindingOptions { min_abs: T::lit(1e-13), initial_segments: 2, ..WindingOptions::default() };
        let mut last = None;
        for _ in 0..8 {
            match contour::winding_polygon(h, &contour::regular_polygon(m, DISK_SIDES), &opts) {
                Ok(w) if w.winding >= 0 => return Ok((m, w.winding as usize)),
                Ok(w) => return Err(Error::Resolution(format!("negative zero count {} at radius {}", w.winding, m.as_f64()))),
                Err(e @ Error::Contour { .. }) => {
                    last = Some(e);
                    m = nudge(m * (T::one() + T::lit(1e-4)));
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap())
    };
    let reach = s.max_abs() * T::lit(0.5);
    let tmin = s.points.iter().fold(T::infinity(), |a, t| a.min(t.abs()));
    let (mut lo, mut hi) = {
        let (m, c) = count(tmin * T::lit(0.5))?;
        if c == 0 {
            let mut lo = m;
            let mut hi = None;
            let mut m = m;
            while m < reach {
                m = m + m;
                let (mm, c) = count(m)?;
                if c > 0 {
                    hi = Some(mm);
                    break;
                }
                lo = mm;
            }
            let hi = hi.ok_or_else(|| Error::Resolution(format!("no zero of A beta_{n} within |z| < {}", reach.as_f64())))?;
            (lo, hi)
        } else {
            let mut hi = m;
            let mut m = m;
            loop {
                m = m * T::lit(0.5);
                let (mm, c) = count(m)?;
                if c == 0 {
                    break (mm, hi);
                }
                if m < T::epsilon() {
                    return Err(Error::Resolution("zeros accumulate at the origin".into()));
                }
                hi = mm;
            }
        }
    };
    while hi - lo > T::lit(1e-6) * hi {
        let (m, c) = count((lo + hi) * T::lit(0.5))?;
        if m >= hi {
            break;
        }
        if c == 0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    let in_window = count(window)?.1;
    Ok(RadiusBracket { n, lower: T::one() / hi, upper: T::one() / (lo * cos_k), n_zeros_in_window: in_window })
}

/// Zeros of `beta_N` recovered from the eigenvalues (`lambda = 0` is dropped).
pub fn zeros_from_eigenvalues<T: Real>(ev: &[C<T>]) -> Vec<C<T>> {
    ev.iter().filter(|l| l.norm() > T::zero()).map(|l| l.inv()).collect()
}
