use cst_core::forward::EnergyGrid;
use cst_core::solver::{fletcher_reeves, lcurve_select, ReconProblem, SolveStatus, TVParams};
use cst_core::sparse::{Fingerprints, SparseOperator};
use cst_core::spectral::{Boundary, Composed, DerivativeConfig, Filter, LinearOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> SparseOperator {
    let mut t = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            t.push((r, c, rng.random::<f64>() - 0.5));
        }
    }
    SparseOperator::from_triplets(rows, cols, &t, Fingerprints::default()).unwrap()
}

fn max_rel_fd_error(p: &ReconProblem<'_>, x: &[f64]) -> f64 {
    let (_, g) = p.objective_and_gradient(x).unwrap();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let h = 1e-5;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let fd = (p.objective_and_gradient(&xp).unwrap().0 - p.objective_and_gradient(&xm).unwrap().0) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / scale);
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let a = dense(80, 64, &mut rng);
        let g: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let p = ReconProblem::new(
            &a,
            g,
            TVParams {
                lambda: 0.3,
                beta: 1e-2,
            },
        )
        .unwrap();
        let x: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let err = max_rel_fd_error(&p, &x);
        assert!(err < 1e-6, "relative gradient error {err}");
    }
}

#[test]
fn gradient_with_derivative_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let grid = EnergyGrid::uniform(0.4, 1.2, 8).unwrap();
    let a = dense(80, 64, &mut rng);
    let cfg = DerivativeConfig {
        gamma: 0.2,
        filter: Filter::Gaussian,
        boundary: Boundary::Reflect,
    };
    let d = Composed::new(&a, &grid, &cfg).unwrap();
    let g: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
    let p = ReconProblem::new(
        &d,
        g,
        TVParams {
            lambda: 0.1,
            beta: 1e-2,
        },
    )
    .unwrap();
    let x: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
    assert!(max_rel_fd_error(&p, &x) < 1e-6);

    // ⟨D A x, y⟩ = ⟨x, Aᵀ Dᵀ y⟩
    let y: Vec<f64> = (0..80).map(|_| rng.random::<f64>() - 0.5).collect();
    let lhs: f64 = d.apply(&x).unwrap().iter().zip(&y).map(|(u, v)| u * v).sum();
    let rhs: f64 = d.apply_adjoint(&y).unwrap().iter().zip(&x).map(|(u, v)| u * v).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

/// Normal equations by Gaussian elimination with partial pivoting.
pub fn direct_least_squares(a: &SparseOperator, g: &[f64]) -> Vec<f64> {
    let n = a.n_cols();
    let mut m = vec![vec![0.0; n + 1]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = a.apply(&e).unwrap();
        let atcol = a.apply_adjoint(&col).unwrap();
        for i in 0..n {
            m[i][j] = atcol[i];
        }
    }
    let atg = a.apply_adjoint(g).unwrap();
    for i in 0..n {
        m[i][n] = atg[i];
    }
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| m[x][k].abs().total_cmp(&m[y][k].abs())).unwrap();
        m.swap(k, p);
        let pivot = m[k].clone();
        for row in &mut m[k + 1..] {
            let f = row[k] / pivot[k];
            row[k..].iter_mut().zip(&pivot[k..]).for_each(|(a, b)| *a -= f * b);
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

#[test]
fn fletcher_reeves_solves_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = dense(50, 30, &mut rng);
    let g: Vec<f64> = (0..50).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut p = ReconProblem::with_width(&a, g.clone(), 6, TVParams { lambda: 0.0, beta: 1.0 }).unwrap();
    p.options.max_iters = 90;
    p.options.grad_tol = 1e-8;
    let (x, rep) = fletcher_reeves(&p).unwrap();
    assert_eq!(rep.status, SolveStatus::Converged, "{rep:?}");
    assert!(rep.grad_norm <= 1e-8);
    let direct = direct_least_squares(&a, &g);
    let norm = direct.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = x
        .iter()
        .zip(&direct)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt();
    assert!(diff <= 1e-6 * norm, "diff {diff}");
}

#[test]
fn unique_minimizer_from_random_starts() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = dense(60, 36, &mut rng);
    let g: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
    let mut sols = Vec::new();
    for _ in 0..3 {
        let mut p = ReconProblem::new(
            &a,
            g.clone(),
            TVParams {
                lambda: 0.05,
                beta: 1e-2,
            },
        )
        .unwrap();
        p.init = (0..36).map(|_| 2.0 * rng.random::<f64>()).collect();
        p.options.max_iters = 2000;
        p.options.grad_tol = 1e-11;
        sols.push(fletcher_reeves(&p).unwrap().0);
    }
    let norm = sols[0].iter().map(|v| v * v).sum::<f64>().sqrt();
    for s in &sols[1..] {
        let d = s
            .iter()
            .zip(&sols[0])
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        assert!(d <= 1e-6 * norm, "{d}");
    }
}

#[test]
fn row_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = dense(30, 16, &mut rng);
    let g: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
    let perm: Vec<usize> = (0..30).map(|k| (7 * k + 3) % 30).collect();
    let rows: Vec<Vec<(usize, f64)>> = perm.iter().map(|&r| a.row(r).collect()).collect();
    let b = SparseOperator::from_rows(16, rows, Fingerprints::default()).unwrap();
    let gp: Vec<f64> = perm.iter().map(|&r| g[r]).collect();
    let tv = TVParams {
        lambda: 0.2,
        beta: 1e-3,
    };
    let p = ReconProblem::new(&a, g, tv).unwrap();
    let q = ReconProblem::new(&b, gp, tv).unwrap();
    let x: Vec<f64> = (0..16).map(|k| k as f64 * 0.1).collect();
    let (ea, _) = p.objective_and_gradient(&x).unwrap();
    let (eb, _) = q.objective_and_gradient(&x).unwrap();
    assert!((ea - eb).abs() <= 1e-12 * ea);
}

/// Gaussian blur of a `side × side` image, replicate boundary.
fn blur_operator(side: usize, sigma: f64) -> SparseOperator {
    let reach = (3.0 * sigma).ceil() as isize;
    let mut rows = Vec::new();
    for r in 0..side as isize {
        for c in 0..side as isize {
            let mut row = Vec::new();
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let w = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
                    let rr = (r + dr).clamp(0, side as isize - 1) as usize;
                    let cc = (c + dc).clamp(0, side as isize - 1) as usize;
                    row.push((rr * side + cc, w));
                }
            }
            let total: f64 = row.iter().map(|e| e.1).sum();
            rows.push(row.into_iter().map(|(k, w)| (k, w / total)).collect());
        }
    }
    SparseOperator::from_rows(side * side, rows, Fingerprints::default()).unwrap()
}

#[test]
fn lcurve_near_discrepancy_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let side = 16;
    let a = blur_operator(side, 1.5);
    let truth: Vec<f64> = (0..side * side)
        .map(|k| {
            let (r, c) = (k / side, k % side);
            if (4..12).contains(&r) && (3..9).contains(&c) {
                1.0
            } else if (10..14).contains(&r) && (10..14).contains(&c) {
                0.5
            } else {
                0.0
            }
        })
        .collect();
    let sigma = 0.02;
    let normal = Normal::new(0.0, sigma).unwrap();
    let g: Vec<f64> = a
        .apply(&truth)
        .unwrap()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    let lambdas: Vec<f64> = (0..9)
        .map(|k| 1e-5 * 10f64.powi(k / 2) * if k % 2 == 1 { 10f64.sqrt() } else { 1.0 })
        .collect();
    let mut p = ReconProblem::new(
        &a,
        g,
        TVParams {
            lambda: 0.0,
            beta: 1e-6,
        },
    )
    .unwrap();
    p.options.max_iters = 500;
    p.options.grad_tol = 1e-10;
    let (res, _) = lcurve_select(&p, &lambdas).unwrap();
    assert!(res.points.windows(2).all(|w| w[0].lambda < w[1].lambda));
    // Discrepancy principle: the λ whose residual is closest to √m·σ.
    let target = ((side * side) as f64).sqrt() * sigma;
    let disc = (0..res.points.len())
        .min_by(|&i, &j| {
            let di = (res.points[i].residual.ln() - target.ln()).abs();
            let dj = (res.points[j].residual.ln() - target.ln()).abs();
            di.total_cmp(&dj)
        })
        .unwrap();
    for pt in &res.points {
        eprintln!(
            "{:.1e} res {:.4} tv {:.3} k {:.3} it {}",
            pt.lambda, pt.residual, pt.tv, pt.curvature, pt.iterations
        );
    }
    assert!(
        (res.index as isize - disc as isize).abs() <= 1,
        "L-curve picked index {} (λ={}), discrepancy index {disc}",
        res.index,
        res.lambda
    );
}

#[test]
fn lcurve_single_point_warns() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = dense(10, 4, &mut rng);
    let p = ReconProblem::new(&a, vec![1.0; 10], TVParams::default()).unwrap();
    let (res, _) = lcurve_select(&p, &[0.3]).unwrap();
    assert_eq!(res.lambda, 0.3);
    assert!(res.warning.is_some());
}
