//! Sparse matrices for the ballistic projector and the first-order scatter
//! operator linearized around a prior density.

use crate::error::{Error, Result};
use crate::forward::{walk_ray, EnergyGrid, Scaling, T1Kernel};
use crate::geometry::ScanGeometry;
use crate::image::DensityImage;
use crate::par;
use crate::physics::PolySource;
use crate::sparse::{image_fingerprint, Fingerprints, SparseOperator};

/// Line-integral matrix: one row per source/detector pair (source-major),
/// entries in cm. Uses the same midpoint samples as the forward projector,
/// so `apply` reproduces `xray_log_projection` up to rounding.
pub fn assemble_xray(geometry: &ScanGeometry, n: usize, fov: f64) -> Result<SparseOperator> {
    if n == 0 || !(fov > 0.0) {
        return Err(Error::config(format!("invalid image grid {n} px over {fov} cm")));
    }
    let shape = DensityImage::zeros(n, fov);
    let h = shape.pixel_size();
    let k = geometry.physical_scale;
    let nd = geometry.n_detectors();
    let rows = par::map_range(geometry.n_pairs(), |idx| {
        let (i, j) = (idx / nd, idx % nd);
        let mut row = Vec::new();
        walk_ray(
            fov,
            geometry.source(i) * k,
            geometry.detector(i, j) * k,
            0.5 * h,
            |p, w| {
                if let Some((r, c)) = shape.pixel_of(p) {
                    row.push((r * n + c, w));
                }
            },
        );
        row
    });
    let fp = Fingerprints {
        geometry: geometry.fingerprint(),
        grid: "ballistic".into(),
        image: image_fingerprint(n, fov),
        sampling: "half-pixel midpoint".into(),
    };
    SparseOperator::from_rows(n * n, rows, fp)
}

/// Options for the linearized first-order operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1Options {
    pub subsampling: usize,
    /// Gaussian blur of the prior in pixels; zero uses the prior as given.
    pub prior_blur: f64,
    pub scaling: Scaling,
}

impl Default for L1Options {
    fn default() -> Self {
        L1Options {
            subsampling: 2,
            prior_blur: 0.0,
            scaling: Scaling::default(),
        }
    }
}

/// First-order operator with attenuation frozen at `prior`: column `p` holds
/// the weights of pixel `p`, so applying it to a density `f` gives the
/// first-order spectrum of `f` under the prior's attenuation.
pub fn assemble_l1(
    prior: &DensityImage,
    geometry: &ScanGeometry,
    grid: &EnergyGrid,
    e0: f64,
    opts: &L1Options,
) -> Result<SparseOperator> {
    assemble_l1_poly(prior, geometry, grid, &PolySource::mono(e0, 1.0)?, opts)
}

/// `Σ_k c_k L1(E_k)` merged into one matrix on the shared grid.
pub fn assemble_l1_poly(
    prior: &DensityImage,
    geometry: &ScanGeometry,
    grid: &EnergyGrid,
    source: &PolySource,
    opts: &L1Options,
) -> Result<SparseOperator> {
    if prior.values.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::domain("prior density must be nonnegative"));
    }
    for &(e0, _) in &source.levels {
        if e0 < grid.e_min() {
            return Err(Error::config(format!(
                "source level {e0} MeV lies below the energy grid starting at {} MeV",
                grid.e_min()
            )));
        }
    }
    let blurred;
    let attenuation = if opts.prior_blur > 0.0 {
        blurred = prior.gaussian_blur(opts.prior_blur);
        &blurred
    } else {
        prior
    };
    let kernels: Vec<(f64, T1Kernel<'_>)> = source
        .levels
        .iter()
        .map(|&(e0, c)| {
            let k = T1Kernel::new(attenuation, geometry, grid, e0, opts.subsampling, &opts.scaling);
            (c, k)
        })
        .collect();
    let n_rows = geometry.n_pairs() * grid.n_bins();
    let n_pix = prior.len();
    let columns = par::map_range(n_pix, |pixel| {
        let mut col = Vec::new();
        let mut buf = Vec::new();
        for (c, kernel) in &kernels {
            for i in 0..geometry.n_sources() {
                buf.clear();
                kernel.entries(pixel, i, &mut buf);
                col.extend(buf.iter().map(|&(row, w)| (row, c * w)));
            }
        }
        col
    });
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
    for (pixel, col) in columns.into_iter().enumerate() {
        for (row, w) in col {
            rows[row].push((pixel, w));
        }
    }
    let levels: Vec<String> = source.levels.iter().map(|(e, c)| format!("{e}:{c}")).collect();
    let fp = Fingerprints {
        geometry: geometry.fingerprint(),
        grid: grid.fingerprint(),
        image: image_fingerprint(prior.n, prior.fov),
        sampling: format!(
            "subsampling={} blur={} levels={}",
            opts.subsampling,
            opts.prior_blur,
            levels.join(",")
        ),
    };
    SparseOperator::from_rows(n_pix, rows, fp)
}
