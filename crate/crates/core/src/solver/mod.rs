//! TV-regularized least squares solved by Fletcher–Reeves nonlinear
//! conjugate gradients, and L-curve selection of the regularization weight.

mod lcurve;
mod tv;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::LinearOperator;

pub use lcurve::{lcurve_select, LCurvePoint, LCurveResult};
use tv::gradient_field;
pub use tv::{tv_smoothed, tv_with_gradient};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TVParams {
    pub lambda: f64,
    pub beta: f64,
}

impl Default for TVParams {
    fn default() -> Self {
        TVParams {
            lambda: 0.0,
            beta: 1e-6,
        }
    }
}

impl TVParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.beta > 0.0) {
            return Err(Error::config(format!(
                "need lambda >= 0 and beta > 0, got lambda={} beta={}",
                self.lambda, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Restart period; `None` uses `ceil(√n_pixels)`.
    pub restart: Option<usize>,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 200,
            grad_tol: 1e-8,
            restart: None,
            c1: 1e-4,
            c2: 0.1,
        }
    }
}

/// `½‖A f − g‖² + λ J_β(f)` for a row-major image `width` pixels wide.
pub struct ReconProblem<'a> {
    pub op: &'a dyn LinearOperator,
    pub data: Vec<f64>,
    pub width: usize,
    pub tv: TVParams,
    pub init: Vec<f64>,
    pub options: SolverOptions,
}

impl<'a> ReconProblem<'a> {
    /// Square image of `op.n_cols()` pixels started from zero.
    pub fn new(op: &'a dyn LinearOperator, data: Vec<f64>, tv: TVParams) -> Result<Self> {
        let n = op.n_cols();
        let width = (n as f64).sqrt().round() as usize;
        if width * width != n {
            return Err(Error::shape(format!("{n} columns do not form a square image")));
        }
        Self::with_width(op, data, width, tv)
    }

    pub fn with_width(op: &'a dyn LinearOperator, data: Vec<f64>, width: usize, tv: TVParams) -> Result<Self> {
        tv.validate()?;
        if data.len() != op.n_rows() {
            return Err(Error::shape(format!(
                "data has {} entries, operator {} rows",
                data.len(),
                op.n_rows()
            )));
        }
        if width == 0 || !op.n_cols().is_multiple_of(width) {
            return Err(Error::shape(format!(
                "{} pixels are not rows of width {width}",
                op.n_cols()
            )));
        }
        Ok(ReconProblem {
            op,
            data,
            width,
            tv,
            init: vec![0.0; op.n_cols()],
            options: SolverOptions::default(),
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.op.n_cols()
    }

    /// `½‖A f − g‖²`.
    pub fn residual(&self, image: &[f64]) -> Result<f64> {
        let r = self.op.apply(image)?;
        Ok(0.5 * r.iter().zip(&self.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    pub fn objective_and_gradient(&self, image: &[f64]) -> Result<(f64, Vec<f64>)> {
        if image.len() != self.n_pixels() {
            return Err(Error::shape(format!(
                "image has {} pixels, problem {}",
                image.len(),
                self.n_pixels()
            )));
        }
        let mut r = self.op.apply(image)?;
        for (a, b) in r.iter_mut().zip(&self.data) {
            *a -= b;
        }
        let mut value = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        let mut grad = self.op.apply_adjoint(&r)?;
        if self.tv.lambda > 0.0 {
            let (j, gj) = tv_with_gradient(image, self.width, self.tv.beta);
            value += self.tv.lambda * j;
            for (g, t) in grad.iter_mut().zip(gj) {
                *g += self.tv.lambda * t;
            }
        }
        Ok((value, grad))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// The line search failed even along steepest descent.
    Stagnated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub grad_norm: f64,
    pub evaluations: usize,
    pub restarts: usize,
    pub line_search_failures: usize,
    pub wall_time_s: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The objective restricted to the line `f + α p`. The data term is an exact
/// quadratic in α and the TV change is summed as per-pixel differences, so
/// `E(f + α p) − E(f)` stays accurate long after it drops below the rounding
/// level of `E` itself. No operator products are needed inside the search.
struct LineModel {
    r_ap: f64,
    ap_ap: f64,
    lambda: f64,
    beta: f64,
    gx: Vec<f64>,
    gy: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl LineModel {
    fn new(problem: &ReconProblem<'_>, x: &[f64], residual: &[f64], dir: &[f64], ap: &[f64]) -> Self {
        let tv = problem.tv.lambda > 0.0;
        let (gx, gy) = if tv {
            gradient_field(x, problem.width)
        } else {
            Default::default()
        };
        let (dx, dy) = if tv {
            gradient_field(dir, problem.width)
        } else {
            Default::default()
        };
        LineModel {
            r_ap: dot(residual, ap),
            ap_ap: dot(ap, ap),
            lambda: problem.tv.lambda,
            beta: problem.tv.beta,
            gx,
            gy,
            dx,
            dy,
        }
    }

    /// `(E(f + α p) − E(f), d/dα E(f + α p))`.
    fn eval(&self, alpha: f64) -> (f64, f64) {
        let mut delta = alpha * self.r_ap + 0.5 * alpha * alpha * self.ap_ap;
        let mut slope = self.r_ap + alpha * self.ap_ap;
        if self.lambda > 0.0 {
            let (mut dj, mut sj) = (0.0, 0.0);
            for k in 0..self.gx.len() {
                let (gx, gy, dx, dy) = (self.gx[k], self.gy[k], self.dx[k], self.dy[k]);
                let a0 = gx * gx + gy * gy + self.beta;
                let (ux, uy) = (gx + alpha * dx, gy + alpha * dy);
                let s = (ux * ux + uy * uy + self.beta).sqrt();
                let change = alpha * (2.0 * (gx * dx + gy * dy) + alpha * (dx * dx + dy * dy));
                dj += change / (s + a0.sqrt());
                sj += (ux * dx + uy * dy) / s;
            }
            delta += self.lambda * dj;
            slope += self.lambda * sj;
        }
        (delta, slope)
    }

    /// Second derivative at α = 0.
    fn curvature(&self) -> f64 {
        let mut c = self.ap_ap;
        if self.lambda > 0.0 {
            let mut cj = 0.0;
            for k in 0..self.gx.len() {
                let (gx, gy, dx, dy) = (self.gx[k], self.gy[k], self.dx[k], self.dy[k]);
                let a = gx * gx + gy * gy + self.beta;
                let gd = gx * dx + gy * dy;
                cj += (dx * dx + dy * dy) / a.sqrt() - gd * gd / (a * a.sqrt());
            }
            c += self.lambda * cj;
        }
        c
    }
}

#[derive(Clone, Copy)]
struct Eval {
    alpha: f64,
    /// Objective change relative to α = 0.
    value: f64,
    slope: f64,
}

struct LineSearch<'m> {
    model: &'m LineModel,
    slope0: f64,
    c1: f64,
    c2: f64,
    evaluations: usize,
}

impl LineSearch<'_> {
    fn eval(&mut self, alpha: f64) -> Eval {
        self.evaluations += 1;
        let (value, slope) = self.model.eval(alpha);
        Eval { alpha, value, slope }
    }

    fn armijo_fails(&self, e: &Eval) -> bool {
        !(e.value <= self.c1 * e.alpha * self.slope0)
    }

    fn curvature_ok(&self, e: &Eval) -> bool {
        e.slope.abs() <= -self.c2 * self.slope0
    }

    /// Strong Wolfe step by bracketing and zoom; `None` if no acceptable
    /// point was found.
    fn search(&mut self, alpha0: f64) -> Option<Eval> {
        const MAX_BRACKET: usize = 60;
        let mut prev = Eval {
            alpha: 0.0,
            value: 0.0,
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        for i in 0..MAX_BRACKET {
            let cur = self.eval(alpha);
            if !cur.value.is_finite() || !cur.slope.is_finite() {
                alpha = 0.5 * (prev.alpha + alpha);
                continue;
            }
            if self.armijo_fails(&cur) || (i > 0 && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature_ok(&cur) {
                return Some(cur);
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            prev = cur;
            alpha *= 4.0;
        }
        None
    }

    fn zoom(&mut self, mut lo: Eval, mut hi: Eval) -> Option<Eval> {
        const MAX_ZOOM: usize = 60;
        for _ in 0..MAX_ZOOM {
            let (a, b) = (lo.alpha, hi.alpha);
            let width = b - a;
            if width.abs() <= 1e-15 * a.abs().max(b.abs()) {
                break;
            }
            let (l, u) = (a.min(b) + 0.05 * width.abs(), a.max(b) - 0.05 * width.abs());
            let alpha = match cubic_min(&lo, &hi) {
                Some(t) if t >= l && t <= u => t,
                _ => a + 0.5 * width,
            };
            let cur = self.eval(alpha);
            if self.armijo_fails(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature_ok(&cur) {
                    return Some(cur);
                }
                if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        // The bracket collapsed: keep the best decrease found, if any.
        (lo.alpha > 0.0 && lo.value < 0.0).then_some(lo)
    }
}

/// Minimizer of the cubic through two points with slopes.
fn cubic_min(a: &Eval, b: &Eval) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Fletcher–Reeves nonlinear conjugate gradients with a strong Wolfe line
/// search, periodic restarts and restart on loss of descent.
///
/// Each iteration costs one forward and one adjoint product: the residual is
/// updated as `r + α A p` and recomputed from scratch at every restart.
pub fn fletcher_reeves(problem: &ReconProblem<'_>) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let opts = &problem.options;
    if !(opts.c1 > 0.0 && opts.c1 < opts.c2 && opts.c2 < 0.5) {
        return Err(Error::config("line search needs 0 < c1 < c2 < 1/2"));
    }
    let n = problem.n_pixels();
    if problem.init.len() != n {
        return Err(Error::shape("initial image does not match the operator"));
    }
    let restart_every = opts.restart.unwrap_or((n as f64).sqrt().ceil() as usize).max(1);
    let op = problem.op;

    let residual_of = |x: &[f64]| -> Result<Vec<f64>> {
        let mut r = op.apply(x)?;
        for (a, b) in r.iter_mut().zip(&problem.data) {
            *a -= b;
        }
        Ok(r)
    };
    let gradient_of = |x: &[f64], r: &[f64]| -> Result<Vec<f64>> {
        let mut g = op.apply_adjoint(r)?;
        if problem.tv.lambda > 0.0 {
            let (_, gj) = tv_with_gradient(x, problem.width, problem.tv.beta);
            for (a, b) in g.iter_mut().zip(gj) {
                *a += problem.tv.lambda * b;
            }
        }
        Ok(g)
    };

    let mut x = problem.init.clone();
    let mut r = residual_of(&x)?;
    let mut grad = gradient_of(&x, &r)?;
    let mut value = 0.5 * dot(&r, &r);
    if problem.tv.lambda > 0.0 {
        value += problem.tv.lambda * tv_smoothed(&x, problem.width, problem.tv.beta);
    }
    let mut gg = dot(&grad, &grad);
    let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut report = SolveReport {
        status: SolveStatus::MaxIterations,
        iterations: 0,
        objective: vec![value],
        grad_norm: gg.sqrt(),
        evaluations: 1,
        restarts: 0,
        line_search_failures: 0,
        wall_time_s: 0.0,
    };
    let mut since_restart = 0;

    while report.iterations < opts.max_iters {
        if gg.sqrt() <= opts.grad_tol {
            report.status = SolveStatus::Converged;
            break;
        }
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            dir = grad.iter().map(|g| -g).collect();
            slope = -gg;
            since_restart = 0;
            report.restarts += 1;
        }
        let steepest = since_restart == 0;
        let ap = op.apply(&dir)?;
        let model = LineModel::new(problem, &x, &r, &dir, &ap);
        let curv = model.curvature();
        let alpha0 = if curv > 0.0 { -slope / curv } else { 1.0 / gg.sqrt() };
        let mut ls = LineSearch {
            model: &model,
            slope0: slope,
            c1: opts.c1,
            c2: opts.c2,
            evaluations: 0,
        };
        let found = ls.search(alpha0);
        report.evaluations += ls.evaluations;
        let Some(step) = found else {
            report.line_search_failures += 1;
            if steepest {
                report.status = SolveStatus::Stagnated;
                break;
            }
            dir = grad.iter().map(|g| -g).collect();
            since_restart = 0;
            report.restarts += 1;
            continue;
        };
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += step.alpha * di;
        }
        value += step.value;
        report.iterations += 1;
        report.objective.push(value);
        since_restart += 1;
        let restart = since_restart >= restart_every;
        if restart {
            r = residual_of(&x)?;
        } else {
            for (ri, a) in r.iter_mut().zip(&ap) {
                *ri += step.alpha * a;
            }
        }
        grad = gradient_of(&x, &r)?;
        report.evaluations += 1;
        let gg_new = dot(&grad, &grad);
        if restart {
            since_restart = 0;
            report.restarts += 1;
            dir = grad.iter().map(|g| -g).collect();
        } else {
            let beta = gg_new / gg;
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g + beta * *d;
            }
        }
        gg = gg_new;
    }
    if report.status == SolveStatus::MaxIterations && gg.sqrt() <= opts.grad_tol {
        report.status = SolveStatus::Converged;
    }
    report.grad_norm = gg.sqrt();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{Fingerprints, SparseOperator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(rows: usize, cols: usize, seed: u64) -> SparseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                t.push((r, c, rng.random::<f64>() - 0.5));
            }
        }
        SparseOperator::from_triplets(rows, cols, &t, Fingerprints::default()).unwrap()
    }

    #[test]
    fn zero_problem_returns_zero() {
        let a = random_dense(20, 16, 1);
        let p = ReconProblem::new(
            &a,
            vec![0.0; 20],
            TVParams {
                lambda: 0.1,
                beta: 1e-6,
            },
        )
        .unwrap();
        let (x, rep) = fletcher_reeves(&p).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert!(rep.iterations <= 1);
        assert_eq!(rep.status, SolveStatus::Converged);
    }

    #[test]
    fn lambda_zero_is_least_squares_gradient() {
        let a = random_dense(12, 9, 2);
        let g: Vec<f64> = (0..12).map(|k| k as f64 * 0.1).collect();
        let p = ReconProblem::new(&a, g.clone(), TVParams { lambda: 0.0, beta: 1.0 }).unwrap();
        let x: Vec<f64> = (0..9).map(|k| (k as f64).sin()).collect();
        let (_, grad) = p.objective_and_gradient(&x).unwrap();
        let mut r = a.apply(&x).unwrap();
        r.iter_mut().zip(&g).for_each(|(u, v)| *u -= v);
        assert_eq!(grad, a.apply_adjoint(&r).unwrap());
    }

    #[test]
    fn shape_errors() {
        let a = random_dense(12, 9, 2);
        assert!(matches!(
            ReconProblem::new(&a, vec![0.0; 5], TVParams::default()),
            Err(Error::Shape(_))
        ));
        let p = ReconProblem::new(&a, vec![0.0; 12], TVParams::default()).unwrap();
        assert!(p.objective_and_gradient(&[0.0; 4]).is_err());
        assert!(ReconProblem::new(&a, vec![0.0; 12], TVParams { lambda: 1.0, beta: 0.0 }).is_err());
    }

    #[test]
    fn monotone_history_with_tv() {
        let a = random_dense(40, 25, 5);
        let truth: Vec<f64> = (0..25).map(|k| if k % 5 > 2 { 1.0 } else { 0.0 }).collect();
        let g = a.apply(&truth).unwrap();
        let mut p = ReconProblem::new(
            &a,
            g,
            TVParams {
                lambda: 0.05,
                beta: 1e-4,
            },
        )
        .unwrap();
        p.options.max_iters = 100;
        let (_, rep) = fletcher_reeves(&p).unwrap();
        assert!(rep.objective.windows(2).all(|w| w[1] <= w[0]));
    }
}
