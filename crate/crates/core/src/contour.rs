//! Winding numbers along rectangle boundaries by adaptive phase tracking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cplx, Real, C};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect<T> {
    pub x0: T,
    pub x1: T,
    pub y0: T,
    pub y1: T,
}

impl<T: Real> Rect<T> {
    pub fn new(x0: T, x1: T, y0: T, y1: T) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::param("rect", "need x0 < x1 and y0 < y1"));
        }
        Ok(Rect { x0, x1, y0, y1 })
    }

    pub fn square(r: T) -> Self {
        Rect { x0: -r, x1: r, y0: -r, y1: r }
    }

    /// Strict interior test.
    pub fn contains(&self, z: C<T>) -> bool {
        z.re > self.x0 && z.re < self.x1 && z.im > self.y0 && z.im < self.y1
    }

    pub fn width(&self) -> T {
        self.x1 - self.x0
    }

    pub fn height(&self) -> T {
        self.y1 - self.y0
    }

    pub fn center(&self) -> C<T> {
        cplx((self.x0 + self.x1) * T::lit(0.5), (self.y0 + self.y1) * T::lit(0.5))
    }

    /// Counter-clockwise corners starting at the lower-left one.
    pub fn corners(&self) -> [C<T>; 4] {
        [cplx(self.x0, self.y0), cplx(self.x1, self.y0), cplx(self.x1, self.y1), cplx(self.x0, self.y1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindingOptions<T> {
    pub initial_segments: usize,
    pub max_depth: usize,
    /// Contour failure below this `|f|`.
    pub min_abs: T,
    pub max_evaluations: usize,
    pub record: bool,
}

impl<T: Real> Default for WindingOptions<T> {
    fn default() -> Self {
        WindingOptions { initial_segments: 16, max_depth: 48, min_abs: T::lit(1e-10), max_evaluations: 4_000_000, record: false }
    }
}

/// One boundary sample with the accumulated phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub x: T,
    pub y: T,
    pub re: T,
    pub im: T,
    pub phase: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindingOutcome<T> {
    pub winding: i64,
    /// Total phase change divided by `2 pi`, before rounding.
    pub turns: T,
    pub min_abs: T,
    pub min_at: (T, T),
    pub evaluations: usize,
    /// Deepest bisection level used.
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Sample<T>>,
}

const QUARTER_TURN: f64 = std::f64::consts::FRAC_PI_4;

struct EdgeRun<T> {
    phase: T,
    evals: usize,
    depth: usize,
    min_abs: T,
    min_at: (T, T),
    samples: Vec<Sample<T>>,
}

fn track_edge<T, F>(f: &F, za: C<T>, zb: C<T>, opts: &WindingOptions<T>, budget: usize) -> Result<EdgeRun<T>>
where
    T: Real,
    F: Fn(C<T>) -> Result<C<T>>,
{
    let mut run = EdgeRun { phase: T::zero(), evals: 0, depth: 0, min_abs: T::infinity(), min_at: (T::zero(), T::zero()), samples: Vec::new() };
    let eval = |z: C<T>, run: &mut EdgeRun<T>| -> Result<C<T>> {
        let v = f(z)?;
        run.evals += 1;
        let a = v.norm();
        if !a.is_finite() {
            return Err(Error::Numerical(format!("non-finite value on the contour at {}{:+}i", z.re, z.im)));
        }
        if a < run.min_abs {
            run.min_abs = a;
            run.min_at = (z.re, z.im);
        }
        if a < opts.min_abs {
            return Err(Error::Contour { min_abs: a.as_f64(), re: z.re.as_f64(), im: z.im.as_f64() });
        }
        Ok(v)
    };
    let limit = T::lit(QUARTER_TURN);
    let seg = opts.initial_segments.max(1);
    let mut prev_z = za;
    let mut prev_f = eval(za, &mut run)?;
    if opts.record {
        run.samples.push(Sample { x: za.re, y: za.im, re: prev_f.re, im: prev_f.im, phase: T::zero() });
    }
    for s in 1..=seg {
        let z_end = za + (zb - za) * (T::idx(s) / T::idx(seg));
        let f_end = eval(z_end, &mut run)?;
        // pending right endpoints, innermost last
        let mut stack = vec![(z_end, f_end, 0usize)];
        while let Some(&(zr, fr, depth)) = stack.last() {
            let zm = (prev_z + zr) * T::lit(0.5);
            let fm = eval(zm, &mut run)?;
            let d1 = (fm / prev_f).arg();
            let d2 = (fr / fm).arg();
            let whole = (fr / prev_f).arg();
            let ok = d1.abs() < limit && d2.abs() < limit && (d1 + d2 - whole).abs() < T::lit(1e-6);
            if ok {
                run.phase += d1 + d2;
                run.depth = run.depth.max(depth);
                if opts.record {
                    run.samples.push(Sample { x: zm.re, y: zm.im, re: fm.re, im: fm.im, phase: run.phase - d2 });
                    run.samples.push(Sample { x: zr.re, y: zr.im, re: fr.re, im: fr.im, phase: run.phase });
                }
                prev_z = zr;
                prev_f = fr;
                stack.pop();
            } else if depth >= opts.max_depth {
                return Err(Error::Resolution(format!(
                    "phase not resolved near {}{:+}i after {} bisections",
                    zm.re.as_f64(),
                    zm.im.as_f64(),
                    opts.max_depth
                )));
            } else {
                stack.push((zm, fm, depth + 1));
            }
            if run.evals > budget {
                return Err(Error::Resolution(format!("more than {budget} evaluations on one side of the contour")));
            }
        }
    }
    Ok(run)
}

/// Winding number of `f` along the boundary of `rect`, counter-clockwise.
/// The four sides are tracked concurrently and summed in order.
pub fn winding<T, F>(f: F, rect: &Rect<T>, opts: &WindingOptions<T>) -> Result<WindingOutcome<T>>
where
    T: Real,
    F: Fn(C<T>) -> Result<C<T>> + Sync,
{
    winding_polygon(f, &rect.corners(), opts)
}

/// Winding number of `f` along the closed polygon through `vertices` (in order).
pub fn winding_polygon<T, F>(f: F, vertices: &[C<T>], opts: &WindingOptions<T>) -> Result<WindingOutcome<T>>
where
    T: Real,
    F: Fn(C<T>) -> Result<C<T>> + Sync,
{
    let m = vertices.len();
    if m < 3 {
        return Err(Error::param("vertices", "a polygon needs at least three vertices"));
    }
    let budget = opts.max_evaluations / m + 1;
    let runs: Vec<Result<EdgeRun<T>>> =
        (0..m).into_par_iter().map(|k| track_edge(&f, vertices[k], vertices[(k + 1) % m], opts, budget)).collect();
    let mut total = T::zero();
    let mut out = WindingOutcome { winding: 0, turns: T::zero(), min_abs: T::infinity(), min_at: (T::zero(), T::zero()), evaluations: 0, depth: 0, samples: Vec::new() };
    for r in runs {
        let r = r?;
        if r.min_abs < out.min_abs {
            out.min_abs = r.min_abs;
            out.min_at = r.min_at;
        }
        out.evaluations += r.evals;
        out.depth = out.depth.max(r.depth);
        out.samples.extend(r.samples.into_iter().map(|mut s| {
            s.phase += total;
            s
        }));
        total += r.phase;
    }
    let turns = total / T::TAU();
    let w = turns.round();
    if (turns - w).abs() > T::lit(0.05) {
        return Err(Error::Resolution(format!("total phase {turns} turns is not an integer")));
    }
    out.winding = w.to_i64().unwrap();
    out.turns = turns;
    Ok(out)
}

/// Regular `k`-gon of circumradius `r` about the origin, with no vertex on the real axis.
pub fn regular_polygon<T: Real>(r: T, k: usize) -> Vec<C<T>> {
    (0..k)
        .map(|j| {
            let th = T::TAU() * (T::idx(j) + T::lit(0.5)) / T::idx(k);
            cplx(r * th.cos(), r * th.sin())
        })
        .collect()
}
