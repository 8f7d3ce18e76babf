//! Box-constrained Levenberg-Marquardt with deterministic multi-start, and
//! the cascade that loosens prior-based boxes, then fixes `a`, then `a`
//! and `b`.

use nalgebra::{Matrix3, Vector3};

use super::{CurvePoint, PowerLawFit, PriorSet, ScalingError, Tier};

/// Projected-gradient tolerance on `d(SSE/2)/d(theta)`.
pub const GRAD_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;
/// Below this exponent an unbounded fit is treated as diverging.
const DEGENERATE_B: f64 = 1e-3;
/// Box half-widths in prior standard deviations, tried in order.
pub const SD_LEVELS: [f64; 4] = [2.5, 5.0, 7.5, 10.0];

/// Keeps `a` and `b` strictly positive even in unconstrained fits.
const POSITIVE_FLOOR: f64 = 1e-9;
/// Multiplicative (a, b) jitters around the base start.
const STARTS: [(f64, f64); 5] = [(1.0, 1.0), (0.5, 1.5), (2.0, 0.67), (1.5, 0.5), (0.67, 2.0)];
const DEFAULT_START: (f64, f64) = (5.0, 0.5);

const A: usize = 0;
const B: usize = 1;
const C: usize = 2;

/// The curve being fitted. With an anchor, `c` is not a parameter but is
/// pinned so the curve passes through the anchor.
struct Problem<'a> {
    points: &'a [CurvePoint],
    anchor: Option<CurvePoint>,
}

impl Problem<'_> {
    fn c_of(&self, th: &[f64; 3]) -> f64 {
        match self.anchor {
            Some(p) => p.y + th[A] * p.x.powf(-th[B]),
            None => th[C],
        }
    }

    fn sse(&self, th: &[f64; 3]) -> f64 {
        let c = self.c_of(th);
        self.points
            .iter()
            .map(|p| {
                let r = -th[A] * p.x.powf(-th[B]) + c - p.y;
                r * r
            })
            .sum()
    }

    /// SSE, gradient of SSE/2 and Gauss-Newton matrix over the `free`
    /// columns (column `i` is parameter `free[i]`; unused entries are 0).
    fn normal_equations(&self, th: &[f64; 3], free: &[usize]) -> Normal {
        let c = self.c_of(th);
        let mut out = Normal {
            sse: 0.0,
            g: Vector3::zeros(),
            jtj: Matrix3::zeros(),
        };
        for p in self.points {
            let xb = p.x.powf(-th[B]);
            let r = -th[A] * xb + c - p.y;
            let mut row = Vector3::zeros();
            for (col, &k) in free.iter().enumerate() {
                row[col] = match (k, self.anchor) {
                    (A, None) => -xb,
                    (B, None) => th[A] * xb * p.x.ln(),
                    (A, Some(q)) => q.x.powf(-th[B]) - xb,
                    (B, Some(q)) => th[A] * (xb * p.x.ln() - q.x.powf(-th[B]) * q.x.ln()),
                    _ => 1.0,
                };
            }
            out.sse += r * r;
            out.g += row * r;
            out.jtj += row * row.transpose();
        }
        out
    }

    /// Least-squares `c` for given `(a, b)`.
    fn best_c(&self, a: f64, b: f64) -> f64 {
        match self.anchor {
            Some(q) => q.y + a * q.x.powf(-b),
            None => {
                let n = self.points.len() as f64;
                self.points.iter().map(|p| p.y + a * p.x.powf(-b)).sum::<f64>() / n
            }
        }
    }
}

type Bounds = [(f64, f64); 3];

struct Normal {
    sse: f64,
    g: Vector3<f64>,
    jtj: Matrix3<f64>,
}

struct Solution {
    theta: [f64; 3],
    sse: f64,
    converged: bool,
}

fn clamp(th: &mut [f64; 3], bounds: &Bounds) {
    for k in 0..3 {
        th[k] = th[k].clamp(bounds[k].0, bounds[k].1);
    }
}

fn blocked(k: usize, gk: f64, th: &[f64; 3], bounds: &Bounds) -> bool {
    let (lo, hi) = bounds[k];
    (th[k] <= lo && gk > 0.0) || (th[k] >= hi && gk < 0.0)
}

/// Largest gradient component that is not blocked by an active bound.
fn projected_gradient(g: &Vector3<f64>, th: &[f64; 3], free: &[usize], bounds: &Bounds) -> f64 {
    free.iter()
        .enumerate()
        .map(|(col, &k)| if blocked(k, g[col], th, bounds) { 0.0 } else { g[col].abs() })
        .fold(0.0, f64::max)
}

fn levenberg_marquardt(problem: &Problem, start: [f64; 3], free: &[usize], bounds: &Bounds) -> Solution {
    let mut th = start;
    clamp(&mut th, bounds);
    let mut cur = problem.normal_equations(&th, free);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let pg = projected_gradient(&cur.g, &th, free, bounds);
        if !pg.is_finite() {
            break;
        }
        if pg <= GRAD_TOLERANCE {
            return Solution { theta: th, sse: cur.sse, converged: true };
        }
        // Unbounded fits can slide toward b -> 0, a -> inf, where the curve
        // is linear in x and never meets the gradient tolerance.
        if bounds[A].1.is_infinite() && th[B] < DEGENERATE_B {
            break;
        }
        // columns pinned against a bound (and unused ones) get a zero step
        let moving: Vec<bool> = (0..3).map(|c| c < free.len() && !blocked(free[c], cur.g[c], &th, bounds)).collect();
        let mut accepted = false;
        while lambda < 1e20 {
            let mut m = cur.jtj;
            let mut rhs = -cur.g;
            for i in 0..3 {
                if moving[i] {
                    m[(i, i)] += lambda * cur.jtj[(i, i)].max(1e-12);
                } else {
                    m.row_mut(i).fill(0.0);
                    m.column_mut(i).fill(0.0);
                    m[(i, i)] = 1.0;
                    rhs[i] = 0.0;
                }
            }
            let Some(delta) = m.cholesky().map(|ch| ch.solve(&rhs)) else {
                lambda *= 4.0;
                continue;
            };
            let mut cand = th;
            for (col, &k) in free.iter().enumerate() {
                cand[k] += delta[col];
            }
            clamp(&mut cand, bounds);
            let next = problem.normal_equations(&cand, free);
            // Near the optimum the SSE stops resolving in floating point;
            // a tie is still progress if the gradient shrinks.
            let better = next.sse < cur.sse
                || (next.sse <= cur.sse * (1.0 + 4.0 * f64::EPSILON)
                    && projected_gradient(&next.g, &cand, free, bounds) < pg);
            if better && next.sse.is_finite() {
                th = cand;
                cur = next;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    let pg = projected_gradient(&cur.g, &th, free, bounds);
    Solution {
        theta: th,
        sse: cur.sse,
        converged: pg <= GRAD_TOLERANCE,
    }
}

/// Best converged solution over the jittered starts, if any converged.
fn multi_start(problem: &Problem, base: (f64, f64, f64), free: &[usize], bounds: &Bounds) -> Option<Solution> {
    let mut best: Option<Solution> = None;
    for (i, &(ja, jb)) in STARTS.iter().enumerate() {
        let a = if free.contains(&A) { base.0 * ja } else { base.0 };
        let b = if free.contains(&B) { base.1 * jb } else { base.1 };
        let c = if i == 0 { base.2 } else { problem.best_c(a, b) };
        let sol = levenberg_marquardt(problem, [a, b, c], free, bounds);
        if sol.converged && best.as_ref().map_or(true, |s| sol.sse < s.sse) {
            best = Some(sol);
        }
    }
    best
}

fn sd_box(priors: &PriorSet, k: f64) -> Bounds {
    let side = |m: f64, sd: f64| (m - k * sd, m + k * sd);
    let (a, b) = (side(priors.median_a, priors.sd_a), side(priors.median_b, priors.sd_b));
    [
        (a.0.max(POSITIVE_FLOOR), a.1.max(POSITIVE_FLOOR)),
        (b.0.max(POSITIVE_FLOOR), b.1.max(POSITIVE_FLOOR)),
        side(priors.median_c, priors.sd_c),
    ]
}

fn finish(problem: &Problem, th: [f64; 3], tier: Tier) -> PowerLawFit {
    PowerLawFit {
        a: th[A],
        b: th[B],
        c: problem.c_of(&th),
        tier,
        anchored_at: problem.anchor,
        sse: problem.sse(&th),
    }
}

fn cascade(problem: &Problem, n: usize, priors: Option<&PriorSet>) -> Result<PowerLawFit, ScalingError> {
    // c is never a free parameter of an anchored fit
    let (abc, bc): (&[usize], &[usize]) = if problem.anchor.is_some() {
        (&[A, B], &[B])
    } else {
        (&[A, B, C], &[B, C])
    };

    if n >= 4 {
        let ys = problem.points.iter().map(|p| p.y);
        let mid = (ys.clone().fold(f64::INFINITY, f64::min) + ys.fold(f64::NEG_INFINITY, f64::max)) / 2.0;
        let base = match priors {
            Some(p) => (p.median_a, p.median_b, p.median_c),
            None => (DEFAULT_START.0, DEFAULT_START.1, mid),
        };
        let open = [
            (POSITIVE_FLOOR, f64::INFINITY),
            (POSITIVE_FLOOR, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
        ];
        if let Some(sol) = multi_start(problem, base, abc, &open) {
            return Ok(finish(problem, sol.theta, Tier::Free));
        }
        if priors.is_none() {
            return Err(ScalingError::Diverged);
        }
    }
    let priors = priors.ok_or(ScalingError::MissingPriors)?;
    let base = (priors.median_a, priors.median_b, priors.median_c);

    if n >= 3 {
        for k in SD_LEVELS {
            if let Some(sol) = multi_start(problem, base, abc, &sd_box(priors, k)) {
                return Ok(finish(problem, sol.theta, Tier::for_sd(k)));
            }
        }
    }
    if n >= 2 {
        for k in SD_LEVELS {
            let mut bounds = sd_box(priors, k);
            bounds[A] = (priors.median_a, priors.median_a);
            if let Some(sol) = multi_start(problem, base, bc, &bounds) {
                return Ok(finish(problem, sol.theta, Tier::FixA));
            }
        }
    }
    let (a, b) = (priors.median_a, priors.median_b);
    Ok(finish(problem, [a, b, problem.best_c(a, b)], Tier::FixAb))
}

/// Least-squares fit of `y = -a x^-b + c`, falling back through the
/// constraint cascade when there are fewer than four points or the free
/// fit does not converge. Priors are needed for every fallback.
pub fn fit_power_law(points: &[CurvePoint], priors: Option<&PriorSet>) -> Result<PowerLawFit, ScalingError> {
    if points.is_empty() {
        return Err(ScalingError::NoPoints);
    }
    points.iter().try_for_each(CurvePoint::validate)?;
    let problem = Problem { points, anchor: None };
    cascade(&problem, points.len(), priors)
}

/// Like [`fit_power_law`] but forced through `anchor`. The anchor counts as
/// one point toward the cascade unless it is already among `points`.
pub fn fit_anchored(
    points: &[CurvePoint],
    anchor: CurvePoint,
    priors: Option<&PriorSet>,
) -> Result<PowerLawFit, ScalingError> {
    anchor.validate()?;
    points.iter().try_for_each(CurvePoint::validate)?;
    let mut all: Vec<CurvePoint> = points.to_vec();
    if !all.contains(&anchor) {
        all.push(anchor);
    }
    let problem = Problem {
        points: &all,
        anchor: Some(anchor),
    };
    cascade(&problem, all.len(), priors)
}
