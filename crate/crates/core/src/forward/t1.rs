use crate::forward::ray::ray_integral;
use crate::forward::{subpixel_offsets, EnergyGrid, Scaling, Spectrum};
use crate::geometry::{unsigned_angle, Point, ScanGeometry};
use crate::image::DensityImage;
use crate::par;
use crate::physics::{compton_energy, klein_nishina_p, sigma_total, N_E_WATER};

/// Per-sample first-order weights with the attenuation frozen at a given
/// density. Shared by the nonlinear forward model (frozen at the true
/// density) and by the linearized operator (frozen at the prior), so both
/// produce identical weights.
pub struct T1Kernel<'a> {
    attenuation: &'a DensityImage,
    geometry: &'a ScanGeometry,
    grid: &'a EnergyGrid,
    e0: f64,
    mu0: f64,
    constant: f64,
    offsets: Vec<(f64, f64)>,
}

impl<'a> T1Kernel<'a> {
    pub fn new(
        attenuation: &'a DensityImage,
        geometry: &'a ScanGeometry,
        grid: &'a EnergyGrid,
        e0: f64,
        subsampling: usize,
        scaling: &Scaling,
    ) -> Self {
        let h = attenuation.pixel_size();
        let offsets = subpixel_offsets(subsampling, h);
        let sub_area = attenuation.pixel_area() / offsets.len() as f64;
        T1Kernel {
            attenuation,
            geometry,
            grid,
            e0,
            mu0: sigma_total(e0) * N_E_WATER,
            constant: scaling.first_order() * sub_area,
            offsets,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.geometry.n_pairs() * self.grid.n_bins()
    }

    pub fn n_pixels(&self) -> usize {
        self.attenuation.len()
    }

    /// Push `(row, weight)` for every subpixel sample of `pixel` and every
    /// detector of `source`, in sample-then-detector order.
    pub fn entries(&self, pixel: usize, source: usize, out: &mut Vec<(usize, f64)>) {
        let img = self.attenuation;
        let g = self.geometry;
        let scale = g.physical_scale;
        let center = img.pixel_center(pixel / img.n, pixel % img.n);
        let s = g.source(source);
        let s_cm = s * scale;
        let nd = g.n_detectors();
        let nb = self.grid.n_bins();
        let support_sq = g.support_radius * g.support_radius;
        for &(ox, oy) in &self.offsets {
            let x_cm = center + Point::new(ox, oy);
            let x = x_cm * (1.0 / scale);
            if x.norm_sq() > support_sq {
                continue;
            }
            let incoming = x - s;
            let dsx = incoming.norm() * scale;
            let a_in = (-self.mu0 * ray_integral(img, s_cm, x_cm)).exp() / (dsx * dsx);
            for j in 0..nd {
                let d = g.detector(source, j);
                let outgoing = d - x;
                let omega = unsigned_angle(incoming, outgoing);
                let e = compton_energy(self.e0, omega);
                let Some(bin) = self.grid.bin_of(e) else {
                    continue;
                };
                let dxd = outgoing.norm() * scale;
                let mu = sigma_total(e) * N_E_WATER;
                let a_out = (-mu * ray_integral(img, x_cm, d * scale)).exp() / (dxd * dxd);
                let w = self.constant * klein_nishina_p(omega, self.e0) * a_in * a_out;
                out.push(((source * nd + j) * nb + bin, w));
            }
        }
    }

    /// Apply the kernel to `values` (same grid as the attenuation density).
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let nd = self.geometry.n_detectors();
        let nb = self.grid.n_bins();
        let block = nd * nb;
        let mut counts = vec![0.0; self.n_rows()];
        par::for_each_chunk_mut(&mut counts, block, |source, slice| {
            let mut buf = Vec::new();
            for (pixel, &v) in values.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                buf.clear();
                self.entries(pixel, source, &mut buf);
                for &(row, w) in &buf {
                    slice[row - source * block] += w * v;
                }
            }
        });
        counts
    }
}

/// First-order scatter spectrum of `density` for a monochromatic source.
pub fn forward_t1(
    density: &DensityImage,
    geometry: &ScanGeometry,
    grid: &EnergyGrid,
    e0: f64,
    subsampling: usize,
    scaling: &Scaling,
) -> Spectrum {
    forward_t1_frozen(density, density, geometry, grid, e0, subsampling, scaling)
}

/// First-order scatter of `density` with attenuation computed from
/// `attenuation`; linear in `density`.
pub fn forward_t1_frozen(
    density: &DensityImage,
    attenuation: &DensityImage,
    geometry: &ScanGeometry,
    grid: &EnergyGrid,
    e0: f64,
    subsampling: usize,
    scaling: &Scaling,
) -> Spectrum {
    let kernel = T1Kernel::new(attenuation, geometry, grid, e0, subsampling, scaling);
    let mut spec = Spectrum::zeros(geometry.n_sources(), geometry.n_detectors(), grid.clone());
    spec.counts = kernel.apply(&density.values);
    spec.metadata.insert("order".into(), "1".into());
    spec.metadata.insert("e0_mev".into(), e0.to_string());
    spec.metadata.insert("subsampling".into(), subsampling.to_string());
    spec.metadata.insert("scaling".into(), scaling.describe());
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::disks_phantom;
    use approx::assert_relative_eq;

    fn setup() -> (ScanGeometry, EnergyGrid) {
        (
            ScanGeometry::circular(2, 6, 5.0, 0.95).unwrap(),
            EnergyGrid::default_mono(32),
        )
    }

    #[test]
    fn zero_phantom_gives_zero() {
        let (g, grid) = setup();
        let img = DensityImage::zeros(16, 10.0);
        let s = forward_t1(&img, &g, &grid, 1.173, 2, &Scaling::default());
        assert!(s.counts.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_is_linear() {
        let (g, grid) = setup();
        let f = disks_phantom(16, 10.0, &[Point::new(1.0, 0.5)], &[1.5], 1.0).unwrap();
        let h = disks_phantom(16, 10.0, &[Point::new(-1.5, -0.5)], &[1.0], 0.7).unwrap();
        let att = disks_phantom(16, 10.0, &[Point::ZERO], &[3.0], 1.0).unwrap();
        let sc = Scaling::default();
        let combo: Vec<f64> = f.values.iter().zip(&h.values).map(|(a, b)| 2.5 * a + b).collect();
        let combo = f.with_values(combo).unwrap();
        let lhs = forward_t1_frozen(&combo, &att, &g, &grid, 1.173, 2, &sc);
        let tf = forward_t1_frozen(&f, &att, &g, &grid, 1.173, 2, &sc);
        let th = forward_t1_frozen(&h, &att, &g, &grid, 1.173, 2, &sc);
        for k in 0..lhs.counts.len() {
            let rhs = 2.5 * tf.counts[k] + th.counts[k];
            assert!((lhs.counts[k] - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn tiny_disk_lands_in_kinematic_bin() {
        let g = ScanGeometry::circular(1, 8, 5.0, 0.95).unwrap();
        let grid = EnergyGrid::uniform(0.2, 1.173, 256).unwrap();
        // Disk centered on a pixel center and smaller than the pixel.
        let c = DensityImage::zeros(128, 10.0).pixel_center(50, 75);
        let img = disks_phantom(128, 10.0, &[c], &[0.01], 1.0).unwrap();
        assert_eq!(img.values.iter().filter(|&&v| v > 0.0).count(), 1);
        // One sample per pixel: the sample sits exactly at the disk center.
        let s = forward_t1(&img, &g, &grid, 1.173, 1, &Scaling::default());
        for j in 0..8 {
            let x = c * (1.0 / g.physical_scale);
            let omega = crate::geometry::scatter_angle(x, g.source(0), g.detector(0, j)).unwrap();
            let expected = grid.bin_of(compton_energy(1.173, omega)).unwrap() as isize;
            let row = s.row(0, j);
            let total: f64 = row.iter().sum();
            if total == 0.0 {
                continue;
            }
            for (b, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    assert!(
                        (b as isize - expected).abs() <= 2,
                        "detector {j}: bin {b} vs {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn subsampling_refinement() {
        let g = ScanGeometry::circular(2, 6, 5.0, 0.95).unwrap();
        let grid = EnergyGrid::uniform(0.2, 1.173, 32).unwrap();
        let img = disks_phantom(
            64,
            10.0,
            &[Point::new(1.0, 0.5), Point::new(-1.5, -1.0)],
            &[0.8, 0.8],
            1.0,
        )
        .unwrap();
        let sc = Scaling::default();
        let a = forward_t1(&img, &g, &grid, 1.173, 2, &sc).total_counts();
        let b = forward_t1(&img, &g, &grid, 1.173, 4, &sc).total_counts();
        assert_relative_eq!(a, b, max_relative = 5e-3);
    }
}
