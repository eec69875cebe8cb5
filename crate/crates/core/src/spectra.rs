//! Discrete real spectra: generators, counting function and tail descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which half-line a point or tail lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Negative,
    Positive,
}

impl Side {
    pub fn sign<T: Real>(self) -> T {
        match self {
            Side::Negative => -T::one(),
            Side::Positive => T::one(),
        }
    }

    pub fn of<T: Real>(t: T) -> Side {
        if t < T::zero() {
            Side::Negative
        } else {
            Side::Positive
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Negative => "negative",
            Side::Positive => "positive",
        }
    }
}

/// Law of the unmaterialized points on one side:
/// `|t(m)| = scale * (m + shift)^growth` for every integer `m >= next`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideLaw<T> {
    pub scale: T,
    pub growth: T,
    pub shift: T,
    pub next: u64,
}

impl<T: Real> SideLaw<T> {
    /// Magnitude of the point with law index `m`.
    #[inline]
    pub fn magnitude(&self, m: u64) -> T {
        self.scale * (T::from_u64(m).unwrap() + self.shift).powf(self.growth)
    }

    /// Order `rho = 1/growth` of the counting function.
    pub fn order(&self) -> T {
        T::one() / self.growth
    }

    /// Density `D` in `n(r) ~ D r^rho`.
    pub fn density(&self) -> T {
        self.scale.powf(-self.order())
    }

    /// Smallest law index whose point has magnitude at least `r`.
    pub fn first_index_beyond(&self, r: T) -> u64 {
        let mut m = self.next;
        if r > self.magnitude(m) {
            let x = (r / self.scale).powf(self.order()) - self.shift;
            m = x.floor().to_u64().unwrap_or(u64::MAX / 4).max(self.next);
            while m > self.next && self.magnitude(m - 1) >= r {
                m -= 1;
            }
            while self.magnitude(m) < r {
                m += 1;
            }
        }
        m
    }
}

/// Which sides a symmetric power tail covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    Positive,
    Negative,
    Both,
}

/// Analytic description of the points beyond the materialized range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tail<T> {
    None,
    Power { side: TailSide, law: SideLaw<T> },
    PairedPower { minus: SideLaw<T>, plus: SideLaw<T> },
    /// Points `(m + offset) / c` continuing both ways.
    Arithmetic { c: T, offset: T, next_minus: u64, next_plus: u64 },
}

impl<T: Real> Tail<T> {
    /// Law governing the unmaterialized points on `side`.
    pub fn law(&self, side: Side) -> Option<SideLaw<T>> {
        match (self, side) {
            (Tail::None, _) => None,
            (Tail::Power { side: s, law }, side) => match (s, side) {
                (TailSide::Both, _) | (TailSide::Positive, Side::Positive) | (TailSide::Negative, Side::Negative) => Some(*law),
                _ => None,
            },
            (Tail::PairedPower { minus, .. }, Side::Negative) => Some(*minus),
            (Tail::PairedPower { plus, .. }, Side::Positive) => Some(*plus),
            (Tail::Arithmetic { c, offset, next_plus, .. }, Side::Positive) => Some(SideLaw {
                scale: T::one() / c.abs(),
                growth: T::one(),
                shift: *offset,
                next: *next_plus,
            }),
            (Tail::Arithmetic { c, offset, next_minus, .. }, Side::Negative) => Some(SideLaw {
                scale: T::one() / c.abs(),
                growth: T::one(),
                shift: -*offset,
                next: *next_minus,
            }),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Tail::None)
    }
}

fn half<T: Real>() -> Option<T> {
    Some(T::lit(0.5))
}

fn one_u32() -> u32 {
    1
}

fn default_q<T: Real>() -> T {
    T::lit(0.5)
}

/// Generator families. Serialized as `{"family": tag, "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub enum Family<T> {
    /// `sign(n) |n|^gamma` for `n != 0`, plus an optional extra point `t0` in `(-1, 1)`.
    TwoSidedPower {
        gamma: T,
        #[serde(default = "half")]
        t0: Option<T>,
    },
    /// `n^gamma`, `n >= 1`.
    OneSidedPower { gamma: T },
    /// `n^2`, `n >= n0`.
    Squares {
        #[serde(default = "one_u32")]
        n0: u32,
    },
    /// `+-(a + k)`, `k >= 0`.
    ShiftedProgression { a: T },
    /// `(n + 1/2) / c`, `n` in Z.
    Livsic { c: T },
    /// `Z \ {0}` with an optional extra non-integer point.
    IntegersPunctured {
        #[serde(default = "half")]
        t0: Option<T>,
    },
    /// Base family with `t + q^j` added next to the `j`-th point on each side.
    NearPairs {
        base: Box<Family<T>>,
        #[serde(default = "default_q")]
        q: T,
        #[serde(default)]
        pairs: Option<usize>,
    },
    /// Explicit list; no tail.
    Custom { values: Vec<T> },
}

impl<T: Real> Family<T> {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::TwoSidedPower { .. } => "two_sided_power",
            Family::OneSidedPower { .. } => "one_sided_power",
            Family::Squares { .. } => "squares",
            Family::ShiftedProgression { .. } => "shifted_progression",
            Family::Livsic { .. } => "livsic",
            Family::IntegersPunctured { .. } => "integers_punctured",
            Family::NearPairs { .. } => "near_pairs",
            Family::Custom { .. } => "custom",
        }
    }

    /// Order and density per side `(rho_minus, d_minus, rho_plus, d_plus)`, when known.
    /// An empty side reports density zero.
    pub fn growth_data(&self) -> Option<(T, T, T, T)> {
        let one = T::one();
        let z = T::zero();
        match self {
            Family::TwoSidedPower { gamma, .. } => Some((one / *gamma, one, one / *gamma, one)),
            Family::OneSidedPower { gamma } => Some((one / *gamma, z, one / *gamma, one)),
            Family::Squares { .. } => Some((T::lit(0.5), z, T::lit(0.5), one)),
            Family::ShiftedProgression { .. } | Family::IntegersPunctured { .. } => Some((one, one, one, one)),
            Family::Livsic { c } => Some((one, c.abs(), one, c.abs())),
            Family::NearPairs { base, .. } => base.growth_data().map(|(a, b, c, d)| (a, b + b, c, d + d)),
            Family::Custom { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = |v: T, f: &str| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(Error::param(f, format!("must be positive and finite, got {v}")))
            }
        };
        let extra = |t0: &Option<T>| match t0 {
            Some(t) if !(t.is_finite() && *t != T::zero() && t.abs() < T::one()) => {
                Err(Error::param("t0", format!("must be nonzero with |t0| < 1, got {t}")))
            }
            _ => Ok(()),
        };
        match self {
            Family::TwoSidedPower { gamma, t0 } => {
                pos(*gamma, "gamma")?;
                extra(t0)
            }
            Family::OneSidedPower { gamma } => pos(*gamma, "gamma"),
            Family::Squares { n0 } => {
                if *n0 == 0 {
                    Err(Error::param("n0", "must be at least 1"))
                } else {
                    Ok(())
                }
            }
            Family::ShiftedProgression { a } => pos(*a, "a"),
            Family::Livsic { c } => {
                if c.is_finite() && *c != T::zero() {
                    Ok(())
                } else {
                    Err(Error::param("c", "must be nonzero and finite"))
                }
            }
            Family::IntegersPunctured { t0 } => extra(t0),
            Family::NearPairs { base, q, .. } => {
                if !(*q > T::zero() && *q < T::one()) {
                    return Err(Error::param("q", format!("must lie in (0, 1), got {q}")));
                }
                base.validate()
            }
            Family::Custom { values } => {
                if values.is_empty() {
                    return Err(Error::param("values", "empty list"));
                }
                if values.iter().any(|v| !v.is_finite() || *v == T::zero()) {
                    return Err(Error::param("values", "points must be finite and nonzero"));
                }
                Ok(())
            }
        }
    }
}

/// Family plus the number of materialized points per side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FamilySpec<T> {
    #[serde(flatten)]
    pub family: Family<T>,
    pub count: usize,
}

impl<T: Real> FamilySpec<T> {
    pub fn new(family: Family<T>, count: usize) -> Self {
        FamilySpec { family, count }
    }
}

/// A materialized spectrum: sorted nonzero points plus a tail descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Spectrum<T> {
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family<T>>,
    pub count: usize,
    pub points: Vec<T>,
    pub tail: Tail<T>,
    #[serde(default)]
    pub label: String,
}

impl<T: Real> Spectrum<T> {
    /// Builds a spectrum from arbitrary points, sorting them.
    pub fn from_points(mut points: Vec<T>, tail: Tail<T>, label: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("points", "empty spectrum"));
        }
        if points.iter().any(|t| !t.is_finite() || *t == T::zero()) {
            return Err(Error::param("points", "points must be finite and nonzero"));
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("points", "duplicate point"));
        }
        let count = points.len();
        Ok(Spectrum { family: None, count, points, tail, label: label.into() })
    }

    /// Re-checks the invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::param("points", "empty spectrum"));
        }
        if self.points.iter().any(|t| !t.is_finite() || *t == T::zero()) {
            return Err(Error::param("points", "points must be finite and nonzero"));
        }
        if self.points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("points", "points must be strictly increasing"));
        }
        for side in [Side::Negative, Side::Positive] {
            if let Some(law) = self.tail.law(side) {
                if !(law.scale > T::zero() && law.growth > T::zero()) {
                    return Err(Error::param("tail", "scale and growth must be positive"));
                }
                if let Some(m) = self.max_abs_on(side) {
                    if law.magnitude(law.next) <= m {
                        return Err(Error::param("tail", format!("{} tail starts inside the materialized range", side.name())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest materialized `|t|`.
    pub fn max_abs(&self) -> T {
        self.points.iter().fold(T::zero(), |m, t| m.max(t.abs()))
    }

    /// Largest materialized `|t|` on one side.
    pub fn max_abs_on(&self, side: Side) -> Option<T> {
        match side {
            Side::Positive => self.points.last().copied().filter(|t| *t > T::zero()),
            Side::Negative => self.points.first().copied().filter(|t| *t < T::zero()).map(|t| -t),
        }
    }

    /// Number of points on one side.
    pub fn count_on(&self, side: Side) -> usize {
        let neg = self.points.partition_point(|t| *t < T::zero());
        match side {
            Side::Negative => neg,
            Side::Positive => self.points.len() - neg,
        }
    }

    /// Positions ordered by `|t|` ascending, negative first on ties.
    pub fn truncation_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&i, &j| {
            let (a, b) = (self.points[i], self.points[j]);
            a.abs().partial_cmp(&b.abs()).unwrap().then(a.partial_cmp(&b).unwrap())
        });
        idx
    }

    /// Position of the node nearest to `x`.
    pub fn nearest(&self, x: T) -> usize {
        let p = self.points.partition_point(|t| *t < x);
        if p == 0 {
            0
        } else if p == self.points.len() {
            p - 1
        } else if (self.points[p] - x).abs() < (x - self.points[p - 1]).abs() {
            p
        } else {
            p - 1
        }
    }

    /// Position of `t` if it is a member (relative tolerance `1e-12`).
    pub fn position_of(&self, t: T) -> Option<usize> {
        let i = self.nearest(t);
        let tol = T::lit(1e-12) * t.abs().max(T::one());
        ((self.points[i] - t).abs() <= tol).then_some(i)
    }
}

/// Materializes a family.
pub fn generate<T: Real>(spec: &FamilySpec<T>) -> Result<Spectrum<T>> {
    spec.family.validate()?;
    let n = spec.count;
    if n == 0 {
        return Err(Error::param("count", "must be at least 1"));
    }
    let nn = n as u64;
    let (points, tail) = match &spec.family {
        Family::TwoSidedPower { gamma, t0 } => {
            let mut v = Vec::with_capacity(2 * n + 1);
            for k in 1..=n {
                let x = T::idx(k).powf(*gamma);
                v.push(x);
                v.push(-x);
            }
            v.extend(t0.iter().copied());
            let law = SideLaw { scale: T::one(), growth: *gamma, shift: T::zero(), next: nn + 1 };
            (v, Tail::Power { side: TailSide::Both, law })
        }
        Family::OneSidedPower { gamma } => {
            let v = (1..=n).map(|k| T::idx(k).powf(*gamma)).collect();
            let law = SideLaw { scale: T::one(), growth: *gamma, shift: T::zero(), next: nn + 1 };
            (v, Tail::Power { side: TailSide::Positive, law })
        }
        Family::Squares { n0 } => {
            let n0 = *n0 as usize;
            let v = (n0..n0 + n).map(|k| T::idx(k) * T::idx(k)).collect();
            let law = SideLaw { scale: T::one(), growth: T::lit(2.0), shift: T::zero(), next: (n0 + n) as u64 };
            (v, Tail::Power { side: TailSide::Positive, law })
        }
        Family::ShiftedProgression { a } => {
            let mut v = Vec::with_capacity(2 * n);
            for k in 0..n {
                let x = *a + T::idx(k);
                v.push(x);
                v.push(-x);
            }
            let law = SideLaw { scale: T::one(), growth: T::one(), shift: *a, next: nn };
            (v, Tail::Power { side: TailSide::Both, law })
        }
        Family::Livsic { c } => {
            let v = (0..2 * n).map(|k| (T::idx(k) - T::idx(n) + T::lit(0.5)) / *c).collect();
            let law = SideLaw { scale: T::one() / c.abs(), growth: T::one(), shift: T::lit(0.5), next: nn };
            (v, Tail::Power { side: TailSide::Both, law })
        }
        Family::IntegersPunctured { t0 } => {
            let mut v = Vec::with_capacity(2 * n + 1);
            for k in 1..=n {
                v.push(T::idx(k));
                v.push(-T::idx(k));
            }
            v.extend(t0.iter().copied());
            let law = SideLaw { scale: T::one(), growth: T::one(), shift: T::zero(), next: nn + 1 };
            (v, Tail::Power { side: TailSide::Both, law })
        }
        Family::NearPairs { base, q, pairs } => {
            let b = generate(&FamilySpec::new((**base).clone(), n))?;
            let mut v = b.points.clone();
            let order = b.truncation_order();
            let mut rank = [0usize; 2];
            let cap = pairs.unwrap_or(n);
            for i in order {
                let t = b.points[i];
                let r = &mut rank[(t > T::zero()) as usize];
                *r += 1;
                if *r > cap {
                    continue;
                }
                let d = q.powi(*r as i32);
                // keep the pair representable
                if d < T::lit(64.0) * T::epsilon() * t.abs() {
                    if pairs.is_some() {
                        return Err(Error::param("pairs", format!("offset q^{r} is below resolution at t = {t}")));
                    }
                    continue;
                }
                v.push(t + d);
            }
            (v, Tail::None)
        }
        Family::Custom { values } => (values.clone(), Tail::None),
    };
    let mut s = Spectrum::from_points(points, tail, spec.family.tag())?;
    s.family = Some(spec.family.clone());
    s.count = n;
    Ok(s)
}

/// `n(r) = #{t_n in [0, r]}`. Errors when `r` exceeds the materialized range.
pub fn counting_function<T: Real>(s: &Spectrum<T>, r: T) -> Result<usize> {
    if !(r > T::zero()) {
        return Err(Error::param("r", "must be positive"));
    }
    let max = s.max_abs();
    if r > max {
        return Err(Error::Range { r: r.as_f64(), max: max.as_f64() });
    }
    Ok(s.points.iter().filter(|t| **t > T::zero() && **t <= r).count())
}

/// Pointwise reciprocals `1/t_n` in the same order.
pub fn reciprocal_view<T: Real>(s: &Spectrum<T>) -> Vec<T> {
    s.points.iter().map(|t| T::one() / *t).collect()
}
