use serde::{Deserialize, Serialize};

use super::{fletcher_reeves, tv_smoothed, ReconProblem, SolveStatus, TVParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LCurvePoint {
    pub lambda: f64,
    /// `‖A f − g‖`.
    pub residual: f64,
    /// `J_β(f)`.
    pub tv: f64,
    /// Signed curvature of the log-log curve; zero at the endpoints.
    pub curvature: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LCurveResult {
    pub lambda: f64,
    pub index: usize,
    /// One row per λ, increasing.
    pub points: Vec<LCurvePoint>,
    pub warning: Option<String>,
}

/// Solve `template` for every λ (ascending, warm-started from the previous
/// solution) and pick the corner of `(log‖Af − g‖, log J_β(f))` by maximal
/// three-point curvature.
pub fn lcurve_select(template: &ReconProblem<'_>, lambdas: &[f64]) -> Result<(LCurveResult, Vec<Vec<f64>>)> {
    let mut grid: Vec<f64> = lambdas.to_vec();
    if grid.is_empty() || grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::config(
            "L-curve needs a nonempty grid of nonnegative finite lambdas",
        ));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut points = Vec::with_capacity(grid.len());
    let mut solutions = Vec::with_capacity(grid.len());
    let mut init = template.init.clone();
    for &lambda in &grid {
        let problem = ReconProblem {
            op: template.op,
            data: template.data.clone(),
            width: template.width,
            tv: TVParams {
                lambda,
                beta: template.tv.beta,
            },
            init: init.clone(),
            options: template.options,
        };
        let (f, report) = fletcher_reeves(&problem)?;
        points.push(LCurvePoint {
            lambda,
            residual: (2.0 * problem.residual(&f)?).sqrt(),
            tv: tv_smoothed(&f, template.width, template.tv.beta),
            curvature: 0.0,
            iterations: report.iterations,
            status: report.status,
        });
        init = f.clone();
        solutions.push(f);
    }

    let log = |v: f64| v.max(1e-300).ln();
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (log(p.residual), log(p.tv))).collect();
    for i in 1..xy.len().saturating_sub(1) {
        points[i].curvature = menger_curvature(xy[i - 1], xy[i], xy[i + 1]);
    }

    let last = points.len() - 1;
    let mut warning = (points.len() < 5).then(|| format!("only {} lambda values; need at least 5", points.len()));
    let mut best: Option<usize> = None;
    for i in 1..last.max(1) {
        let k = points[i].curvature;
        if k > 0.0 && best.is_none_or(|b| k >= points[b].curvature) {
            best = Some(i);
        }
    }
    let index = match best {
        Some(i) => i,
        None => {
            warning.get_or_insert_with(|| "L-curve has no corner; returning the largest lambda".into());
            last
        }
    };
    Ok((
        LCurveResult {
            lambda: points[index].lambda,
            index,
            points,
            warning,
        },
        solutions,
    ))
}

/// Signed curvature of the circle through three points; positive when the
/// path turns counter-clockwise.
fn menger_curvature(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (acx, acy) = (c.0 - a.0, c.1 - a.1);
    let (bcx, bcy) = (c.0 - b.0, c.1 - b.1);
    let cross = abx * acy - aby * acx;
    let denom = (abx.hypot(aby)) * (acx.hypot(acy)) * (bcx.hypot(bcy));
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curvature_of_unit_circle() {
        let p = |t: f64| (t.cos(), t.sin());
        let k = menger_curvature(p(0.0), p(0.5), p(1.2));
        assert!((k - 1.0).abs() < 1e-12);
        assert!((menger_curvature(p(1.2), p(0.5), p(0.0)) + 1.0).abs() < 1e-12);
    }
}
