use cst_core::assembly::{assemble_l1, assemble_l1_poly, assemble_xray, L1Options};
use cst_core::forward::{forward_t1_frozen, xray_log_projection, EnergyGrid, Scaling};
use cst_core::phantom::thorax_phantom;
use cst_core::physics::{backscatter_energy, PolySource};
use cst_core::spectral::LinearOperator;
use cst_core::ScanGeometry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn setup(n: usize) -> (cst_core::DensityImage, ScanGeometry) {
    let truth = thorax_phantom(n).unwrap();
    let g = ScanGeometry::circular(4, 8, 0.5 * truth.fov, 0.95).unwrap();
    (truth, g)
}

#[test]
fn adjoints_satisfy_inner_product_identity() {
    let (truth, g) = setup(32);
    let grid = EnergyGrid::uniform(0.355, 1.173, 32).unwrap();
    let l1 = assemble_l1(&truth, &g, &grid, 1.173, &L1Options::default()).unwrap();
    let xray = assemble_xray(&g, truth.n, truth.fov).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for op in [&l1, &xray] {
        let x: Vec<f64> = (0..op.n_cols()).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..op.n_rows()).map(|_| rng.random::<f64>()).collect();
        let lhs = dot(&LinearOperator::apply(op, &x).unwrap(), &y);
        let rhs = dot(&x, &LinearOperator::apply_adjoint(op, &y).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs(), "{lhs} vs {rhs}");
    }
}

#[test]
fn frozen_operator_is_linear_in_density() {
    let (truth, g) = setup(32);
    let grid = EnergyGrid::uniform(0.355, 1.173, 32).unwrap();
    let prior = truth.gaussian_blur(1.0);
    let op = assemble_l1(&prior, &g, &grid, 1.173, &L1Options::default()).unwrap();
    let other = truth
        .with_values(truth.values.iter().map(|v| 0.5 * v + 0.1).collect())
        .unwrap();
    let direct = forward_t1_frozen(&other, &prior, &g, &grid, 1.173, 2, &Scaling::default());
    let applied = op.apply(&other.values).unwrap();
    let peak = direct.counts.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in applied.iter().zip(&direct.counts) {
        assert!((a - b).abs() <= 1e-12 * peak);
    }
}

#[test]
fn xray_operator_matches_projector() {
    let (truth, g) = setup(32);
    let op = assemble_xray(&g, truth.n, truth.fov).unwrap();
    let direct = xray_log_projection(&truth, &g);
    for (a, b) in op.apply(&truth.values).unwrap().iter().zip(&direct) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn cobalt_rows_above_lower_line_come_from_upper_level() {
    let (truth, g) = setup(32);
    let grid = EnergyGrid::uniform(0.3, 1.332, 48).unwrap();
    let source = PolySource::cobalt60(1.0);
    let opts = L1Options::default();
    let poly = assemble_l1_poly(&truth, &g, &grid, &source, &opts).unwrap();
    let lower = assemble_l1(&truth, &g, &grid, 1.173, &opts).unwrap();
    let upper = assemble_l1(&truth, &g, &grid, 1.332, &opts).unwrap();
    let nb = grid.n_bins();
    let mut checked = 0;
    for r in 0..poly.n_rows() {
        let b = r % nb;
        if grid.e_min() + b as f64 * grid.width(b) >= 1.173 {
            assert_eq!(lower.row(r).count(), 0, "row {r} has lower-level entries");
            let p: Vec<_> = poly.row(r).collect();
            let u: Vec<_> = upper.row(r).map(|(c, v)| (c, 0.5 * v)).collect();
            assert_eq!(p.len(), u.len());
            for ((c1, v1), (c2, v2)) in p.iter().zip(&u) {
                assert_eq!(c1, c2);
                assert!((v1 - v2).abs() <= 1e-14 * v2.abs());
            }
            checked += 1;
        }
    }
    assert!(checked > 0);
    // Nothing below the single-scatter backscatter edge of the lower line.
    let edge = backscatter_energy(1.173);
    for r in 0..lower.n_rows() {
        let b = r % nb;
        if grid.e_min() + (b + 1) as f64 * grid.width(b) < edge {
            assert_eq!(lower.row(r).count(), 0);
        }
    }
}
