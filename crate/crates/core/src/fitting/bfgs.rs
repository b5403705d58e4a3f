//! Dense BFGS minimisation with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

/// Stopping and line-search parameters.
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_evals: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iters: 50,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsReport {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    /// Accepted steps.
    pub iterations: usize,
    pub evaluations: usize,
    /// A line search failed before the stopping criterion was met.
    pub stalled: bool,
}

/// Objective callback: value and gradient, or `None` where the objective
/// is undefined (treated as `+inf`).
pub trait Objective: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)> {}
impl<F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>> Objective for F {}

struct Trial {
    a: f64,
    f: f64,
    d: f64,
    x: DVector<f64>,
    g: DVector<f64>,
}

/// Line search along `dir` from `x` (value `f0`, slope `d0 < 0`).
/// Returns the accepted point, preferring one satisfying the strong Wolfe
/// conditions and otherwise the best point satisfying sufficient decrease.
fn line_search<F: Objective>(
    f: &mut F,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    f0: f64,
    d0: f64,
    opts: &BfgsOptions,
    evals: &mut usize,
) -> Option<Trial> {
    let mut used = 0usize;
    let mut best: Option<Trial> = None;
    let mut eval = |a: f64, used: &mut usize| -> Trial {
        *used += 1;
        let xa = x + dir * a;
        match f(&xa) {
            Some((fa, ga)) if fa.is_finite() => {
                let d = ga.dot(dir);
                Trial { a, f: fa, d, x: xa, g: ga }
            }
            _ => Trial {
                a,
                f: f64::INFINITY,
                d: f64::NAN,
                x: xa,
                g: DVector::zeros(0),
            },
        }
    };
    let armijo = |t: &Trial| t.f <= f0 + opts.c1 * t.a * d0;
    let curvature = |t: &Trial| t.d.abs() <= -opts.c2 * d0;
    let keep = |best: &mut Option<Trial>, t: &Trial| {
        if armijo(t) && best.as_ref().is_none_or(|b| t.f < b.f) {
            *best = Some(Trial {
                a: t.a,
                f: t.f,
                d: t.d,
                x: t.x.clone(),
                g: t.g.clone(),
            });
        }
    };

    // bracketing phase
    let mut lo = Trial { a: 0.0, f: f0, d: d0, x: x.clone(), g: DVector::zeros(0) };
    let mut a = 1.0;
    let mut hi: Trial;
    let mut first = true;
    loop {
        if used >= opts.max_evals {
            *evals += used;
            return best;
        }
        let t = eval(a, &mut used);
        keep(&mut best, &t);
        if !armijo(&t) || (!first && t.f >= lo.f) {
            hi = t;
            break;
        }
        if curvature(&t) {
            *evals += used;
            return Some(t);
        }
        if t.d >= 0.0 {
            hi = lo;
            lo = t;
            break;
        }
        first = false;
        lo = t;
        a *= 2.0;
    }

    // zoom phase: lo satisfies sufficient decrease, the minimiser lies between lo and hi
    while used < opts.max_evals {
        let (l, h) = (lo.a, hi.a);
        let width = h - l;
        let mut trial = if hi.f.is_finite() && lo.d.is_finite() {
            // minimiser of the quadratic through (lo.f, lo.d) and hi.f
            let denom = 2.0 * (hi.f - lo.f - lo.d * width);
            if denom > 0.0 {
                l - lo.d * width * width / denom
            } else {
                0.5 * (l + h)
            }
        } else {
            0.5 * (l + h)
        };
        let (mn, mx) = if l < h { (l, h) } else { (h, l) };
        let margin = 0.1 * (mx - mn);
        if !trial.is_finite() || trial < mn + margin || trial > mx - margin {
            trial = 0.5 * (l + h);
        }
        if (mx - mn) <= 1e-16 * mx.max(1.0) {
            break;
        }
        let t = eval(trial, &mut used);
        keep(&mut best, &t);
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                *evals += used;
                return Some(t);
            }
            if t.d * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    *evals += used;
    best
}

/// Minimises `f` from `x0` with BFGS. `h0` is the initial inverse Hessian;
/// when `None` the identity scaled by `1 / (1 + |g0|)` is used. With
/// `single_step` exactly one accepted step is taken.
pub fn minimize<F: Objective>(
    mut f: F,
    x0: &DVector<f64>,
    h0: Option<DMatrix<f64>>,
    single_step: bool,
    opts: &BfgsOptions,
) -> Option<BfgsReport> {
    let (mut fx, mut g) = f(x0)?;
    if !fx.is_finite() {
        return None;
    }
    let n = x0.len();
    let mut x = x0.clone();
    let default_h0 = |g: &DVector<f64>| DMatrix::identity(n, n) / (1.0 + g.norm());
    let mut h = h0.unwrap_or_else(|| default_h0(&g));
    let mut report = BfgsReport {
        x: x.clone(),
        f: fx,
        grad: g.clone(),
        iterations: 0,
        evaluations: 1,
        stalled: false,
    };
    let max_iters = if single_step { 1 } else { opts.max_iters };

    while report.iterations < max_iters {
        if g.norm() < opts.grad_tol {
            break;
        }
        let mut dir = -(&h * &g);
        let mut d0 = g.dot(&dir);
        if !(d0 < 0.0) {
            h = default_h0(&g);
            dir = -(&h * &g);
            d0 = g.dot(&dir);
        }
        let Some(t) = line_search(&mut f, &x, &dir, fx, d0, opts, &mut report.evaluations) else {
            report.stalled = true;
            break;
        };
        let s = &t.x - &x;
        let y = &t.g - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = t.x;
        fx = t.f;
        g = t.g;
        report.iterations += 1;
    }
    report.x = x;
    report.f = fx;
    report.grad = g;
    Some(report)
}
