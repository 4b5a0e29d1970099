use cst_core::forward::{EnergyGrid, Spectrum};
use cst_core::io::{
    image_from_bytes, image_to_bytes, operator_from_bytes, operator_to_bytes, read_image, read_operator, read_spectrum,
    spectrum_from_bytes, spectrum_to_bytes, write_image, write_operator, write_spectrum,
};
use cst_core::physics::{compton_angle, compton_energy};
use cst_core::sparse::{Fingerprints, SparseOperator};
use cst_core::spectral::{Boundary, Derivative, DerivativeConfig, Filter};
use cst_core::DensityImage;
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn triplets() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, f64)>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
        let entry = (0..r, 0..c, -5.0f64..5.0);
        (Just(r), Just(c), prop::collection::vec(entry, 0..40))
    })
}

fn spectrum() -> impl Strategy<Value = Spectrum> {
    (1usize..4, 1usize..5, 4usize..10, 1usize..3).prop_flat_map(|(ns, nd, nb, nl)| {
        (
            prop::collection::vec(0.0f64..1e3, ns * nd * nb),
            prop::collection::vec(0.0f64..1e3, nl * ns * nd),
            "[a-z]{1,8}",
        )
            .prop_map(move |(counts, ballistic, tag)| {
                let grid = EnergyGrid::uniform(0.3, 1.2, nb).unwrap();
                let mut s = Spectrum::zeros_levels(ns, nd, grid, nl);
                s.counts = counts;
                s.ballistic = ballistic;
                s.metadata.insert("tag".into(), tag);
                s
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_adjoint_identity((r, c, t) in triplets(), seed in 0u64..1000) {
        let op = SparseOperator::from_triplets(r, c, &t, Fingerprints::default()).unwrap();
        let x: Vec<f64> = (0..c).map(|k| ((k as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
        let y: Vec<f64> = (0..r).map(|k| ((k as u64 * 13 + seed) % 11) as f64 - 5.0).collect();
        let lhs = dot(&op.apply(&x).unwrap(), &y);
        let rhs = dot(&x, &op.apply_adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn derivative_transpose_identity(
        n in 4usize..40,
        gamma in 0.01f64..0.3,
        periodic in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let cfg = DerivativeConfig {
            gamma,
            filter: Filter::Gaussian,
            boundary: if periodic { Boundary::Periodic } else { Boundary::Reflect },
        };
        let d = Derivative::new(n, 0.02, cfg).unwrap();
        let x: Vec<f64> = (0..n).map(|k| ((k as u64 * 7 + seed) % 23) as f64).collect();
        let y: Vec<f64> = (0..n).map(|k| ((k as u64 * 5 + seed) % 19) as f64).collect();
        let lhs = dot(&d.apply(&x).unwrap(), &y);
        let rhs = dot(&x, &d.apply_transpose(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn compton_inverse_pair(e0 in 0.05f64..3.0, omega in 1e-3f64..(std::f64::consts::PI - 1e-3)) {
        let e = compton_energy(e0, omega);
        prop_assert!((compton_angle(e0, e).unwrap() - omega).abs() < 1e-12);
    }

    #[test]
    fn spectrum_bytes_roundtrip(s in spectrum()) {
        let bytes = spectrum_to_bytes(&s).unwrap();
        let back = spectrum_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(spectrum_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn operator_bytes_roundtrip((r, c, t) in triplets(), tag in "[a-z0-9]{0,12}") {
        let fp = Fingerprints { geometry: tag, ..Default::default() };
        let op = SparseOperator::from_triplets(r, c, &t, fp).unwrap();
        let bytes = operator_to_bytes(&op).unwrap();
        prop_assert_eq!(operator_to_bytes(&operator_from_bytes(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn image_bytes_roundtrip(n in 1usize..10, fov in 0.5f64..50.0, seed in 0u64..1000) {
        let values = (0..n * n).map(|k| ((k as u64 * 37 + seed) % 101) as f64 / 7.0).collect();
        let img = DensityImage::from_values(n, fov, values).unwrap();
        let bytes = image_to_bytes(&img);
        let back = image_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(image_to_bytes(&back), bytes);
    }
}

#[test]
fn file_roundtrips_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let img = DensityImage::from_values(3, 2.0, (0..9).map(f64::from).collect()).unwrap();
    let op = SparseOperator::from_triplets(2, 3, &[(0, 1, 2.5), (1, 2, -1.0)], Fingerprints::default()).unwrap();
    let mut s = Spectrum::zeros(1, 2, EnergyGrid::uniform(0.4, 1.0, 5).unwrap());
    s.counts.iter_mut().enumerate().for_each(|(k, v)| *v = k as f64 * 0.5);

    let p = |name: &str| dir.path().join(name);
    write_image(&p("a.csti"), &img).unwrap();
    write_image(&p("b.csti"), &read_image(&p("a.csti")).unwrap()).unwrap();
    write_operator(&p("a.cstm"), &op).unwrap();
    write_operator(&p("b.cstm"), &read_operator(&p("a.cstm")).unwrap()).unwrap();
    write_spectrum(&p("a.csts"), &s).unwrap();
    write_spectrum(&p("b.csts"), &read_spectrum(&p("a.csts")).unwrap()).unwrap();
    for ext in ["csti", "cstm", "csts"] {
        let a = std::fs::read(p(&format!("a.{ext}"))).unwrap();
        let b = std::fs::read(p(&format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext}");
    }
}
