//! Second-order scatter.
//!
//! [`forward_t2`] integrates over the first site `x`, the signed first angle
//! and the distance to the second site, collecting each sample into the bin
//! of its energy parameter with the line element of the level curve through
//! it. [`forward_t2_oracle`] sums over pairs of sites directly and bins
//! them by their energy parameter; it is quadratic in the number of occupied
//! pixels and meant for small test phantoms.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::forward::ray::{ray_integral, LineIntegralMap};
use crate::forward::{subpixel_offsets, EnergyGrid, Scaling, Spectrum};
use crate::geometry::{grad_phi, kappa_rho, phi, Point, ScanGeometry, SiteFrame, DEFAULT_EPS_R};
use crate::image::DensityImage;
use crate::par;
use crate::physics::{compton_energy, energy_of_lambda, klein_nishina_p_cos, lambda_raw, sigma_total, N_E_WATER};

/// Relative `|sin|` below which three sites count as collinear.
pub const COLLINEAR_SIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct T2Config {
    /// Quadrature nodes over the signed first angle; at least 64.
    pub n_omega1: usize,
    /// Minimum distance between the two sites, in geometry units.
    pub eps_r: f64,
    /// Half-width of the excluded interval around zero first angle.
    pub delta: f64,
    /// Sample spacing along each outgoing ray, in pixels.
    pub radial_step: f64,
    /// Use every `stride`-th pixel row and column as first site, weighting
    /// each by `stride²` pixel areas.
    pub first_site_stride: usize,
    pub scaling: Scaling,
}

impl Default for T2Config {
    fn default() -> Self {
        T2Config {
            n_omega1: 256,
            eps_r: DEFAULT_EPS_R,
            delta: 1e-3,
            radial_step: 0.25,
            first_site_stride: 1,
            scaling: Scaling::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    /// Minimum distance between the two sites, in geometry units.
    pub eps_r: f64,
    /// Second sites are sampled on a `k×k` sub-grid of each pixel.
    pub y_subsampling: usize,
    pub scaling: Scaling,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            eps_r: DEFAULT_EPS_R,
            y_subsampling: 4,
            scaling: Scaling::default(),
        }
    }
}

fn first_sites(density: &DensityImage, geometry: &ScanGeometry, stride: usize) -> Vec<(Point, f64)> {
    let stride = stride.max(1);
    let support_sq = geometry.support_radius * geometry.support_radius;
    let inv = 1.0 / geometry.physical_scale;
    let mut out = Vec::new();
    for r in (0..density.n).step_by(stride) {
        for c in (0..density.n).step_by(stride) {
            let v = density.get(r, c);
            let x = density.pixel_center(r, c);
            if v > 0.0 && (x * inv).norm_sq() <= support_sq {
                out.push((x, v));
            }
        }
    }
    out
}

/// Distance from `x` along unit `u` to the circle of radius `radius`.
fn exit_distance(x: Point, u: Point, radius: f64) -> f64 {
    let b = x.dot(u);
    let c = x.norm_sq() - radius * radius;
    (-b + (b * b - c).max(0.0).sqrt()).max(0.0)
}

/// Second-order scatter spectrum by quadrature over the signed first angle.
///
/// For every first site `x` and node `ω1`, the outgoing ray is sampled every
/// `radial_step` pixels. Each sample `y` with material fixes the energy
/// parameter `λ = cos ω1 + cos ω2`; its contribution is the weight times the
/// line element of the level curve through `y` times `|∂λ/∂r| Δr`, spread
/// over the bins covered by the λ range of its `Δω1 × Δr` cell. Every bin is
/// thus integrated over its whole λ range rather than sampled at one point.
pub fn forward_t2(
    density: &DensityImage,
    geometry: &ScanGeometry,
    grid: &EnergyGrid,
    e0: f64,
    cfg: &T2Config,
) -> Result<Spectrum> {
    if cfg.n_omega1 < 64 {
        return Err(Error::config(format!(
            "n_omega1 = {} is below the minimum of 64",
            cfg.n_omega1
        )));
    }
    if !(cfg.delta > 0.0 && cfg.delta < PI) || !(cfg.eps_r > 0.0) {
        return Err(Error::config("invalid angular exclusion or eps_r"));
    }
    let nd = geometry.n_detectors();
    let nb = grid.n_bins();
    let scale = geometry.physical_scale;
    let mu0 = sigma_total(e0) * N_E_WATER;
    let mu_bin: Vec<f64> = (0..nb).map(|b| sigma_total(grid.midpoint(b)) * N_E_WATER).collect();

    let half = cfg.n_omega1 / 2;
    let d_omega = (PI - cfg.delta) / half as f64;
    let sites = first_sites(density, geometry, cfg.first_site_stride);
    let stride = cfg.first_site_stride.max(1) as f64;
    let site_area = density.pixel_area() * stride * stride;
    if !(cfg.radial_step > 0.0 && cfg.radial_step <= 0.5) {
        return Err(Error::config("radial step must lie in (0, 0.5] pixels"));
    }
    let step = cfg.radial_step * density.pixel_size() / scale;
    let constant = cfg.scaling.second_order() * site_area * d_omega * step;

    let bins = LambdaBins::new(grid, e0);
    let mut counts = vec![0.0; geometry.n_pairs() * nb];
    par::for_each_chunk_mut(&mut counts, nd * nb, |i, slice| {
        let s = geometry.source(i);
        let det_maps: Vec<LineIntegralMap> = (0..nd)
            .map(|j| LineIntegralMap::new(density, geometry.detector(i, j) * scale))
            .collect();
        let dets: Vec<Point> = (0..nd).map(|j| geometry.detector(i, j)).collect();
        let mut samples: Vec<RaySample> = Vec::new();
        let mut spread = Vec::with_capacity(SPLAT * SPLAT);
        for &(x_cm, nx) in &sites {
            let x = x_cm * (1.0 / scale);
            let dsx = (x - s).norm() * scale;
            let a_in = (-mu0 * ray_integral(density, s * scale, x_cm)).exp() / (dsx * dsx);
            let beta = (x - s).angle();
            // One sample per cell of Δω1 × Δr along every node's ray.
            samples.clear();
            for lo in [-PI, cfg.delta] {
                for k in 0..half {
                    let w1 = lo + (k as f64 + 0.5) * d_omega;
                    let (sin1, cos1) = w1.sin_cos();
                    if sin1.abs() < COLLINEAR_SIN {
                        continue;
                    }
                    let t = w1 - beta + 0.5 * PI;
                    let (sin_t, cos_t) = t.sin_cos();
                    let u = Point::new(sin_t, cos_t);
                    let e1 = compton_energy(e0, w1.abs());
                    let mu1 = sigma_total(e1) * N_E_WATER;
                    let p1 = klein_nishina_p_cos(cos1, e0);
                    let t_max = exit_distance(x, u, geometry.support_radius);
                    let m = (t_max / step).floor() as usize;
                    let mut acc = 0.0;
                    for q in 0..m {
                        let r = (q as f64 + 0.5) * step;
                        let v = density.value_at((x + u * r) * scale);
                        let half_path = 0.5 * v * step * scale;
                        if v > 0.0 && r > cfg.eps_r {
                            let r_cm = r * scale;
                            samples.push(RaySample {
                                r,
                                u,
                                du: Point::new(cos_t, -sin_t),
                                sin1,
                                cos1,
                                energy: e1,
                                weight: v * p1 * (-mu1 * (acc + half_path)).exp() / (r_cm * r_cm),
                            });
                        }
                        acc += 2.0 * half_path;
                    }
                }
            }

            for (j, &d) in dets.iter().enumerate() {
                let frame = SiteFrame::new(s, x, d);
                let e = frame.to_detector;
                let dist = frame.dist_detector;
                let row = &mut slice[j * nb..(j + 1) * nb];
                for smp in &samples {
                    let u = smp.u;
                    let root = e.cross(u).abs();
                    if root < 1e-12 {
                        continue;
                    }
                    let y = x + u * smp.r;
                    let v = d - y;
                    let dv = v.norm();
                    let cos2 = u.dot(v) / dv;
                    let sin2 = u.cross(v).abs() / dv;
                    if sin2 < COLLINEAR_SIN {
                        continue;
                    }
                    let lambda = smp.cos1 + cos2;
                    // λ varies almost linearly over the cell; spread the
                    // cell over the bins its λ range covers.
                    let dl_dr = -sin2 * sin2 / dv;
                    let dl_dw = -smp.sin1 + smp.du.dot(v) / dv * (1.0 + smp.r * cos2 / dv);
                    bins.spread(lambda, dl_dr * step, dl_dw * d_omega, &mut spread);
                    if spread.is_empty() {
                        continue;
                    }
                    let eta2 = e.dot(u);
                    let deta2 = e.x * u.y - e.y * u.x;
                    let cot2 = cos2 / sin2;
                    let dr = dist * (deta2 * (1.0 + cot2 * eta2 / root) - smp.sin1 / (sin2 * sin2 * sin2) * root);
                    let dl = smp.r.hypot(dr) * scale;
                    // Attenuation towards the detector at the energy of the
                    // cell centre (or of its first bin if the centre falls
                    // off the grid).
                    let b0 = bins.bin_of(lambda).unwrap_or(spread[0].0);
                    let dyd = dv * scale;
                    let a_out = (-mu_bin[b0] * det_maps[j].at(y * scale)).exp() / (dyd * dyd);
                    let common = constant
                        * nx
                        * smp.weight
                        * klein_nishina_p_cos(cos2, smp.energy)
                        * a_in
                        * a_out
                        * dl
                        * (-dl_dr);
                    for &(b, frac) in &spread {
                        row[b] += common * frac;
                    }
                }
            }
        }
    });

    let mut spec = Spectrum::zeros(geometry.n_sources(), nd, grid.clone());
    spec.counts = counts;
    spec.metadata.insert("order".into(), "2".into());
    spec.metadata.insert("e0_mev".into(), e0.to_string());
    spec.metadata.insert("n_omega1".into(), cfg.n_omega1.to_string());
    spec.metadata.insert("eps_r".into(), cfg.eps_r.to_string());
    spec.metadata.insert("scaling".into(), cfg.scaling.describe());
    Ok(spec)
}

/// Detector-independent part of one sample of the outgoing fan at `x`.
struct RaySample {
    r: f64,
    u: Point,
    /// `∂u/∂ω1`.
    du: Point,
    sin1: f64,
    cos1: f64,
    /// Photon energy after the first scatter.
    energy: f64,
    /// `n_e(y) P(ω1) A(x, y)`.
    weight: f64,
}

/// Sub-cells per side used to spread one sample over energy bins.
const SPLAT: usize = 4;

/// Energy bins as intervals of the energy parameter, with a lookup table
/// for constant-time bin search.
struct LambdaBins {
    /// Increasing λ edges, clipped to (0, 2).
    edges: Vec<f64>,
    lo: f64,
    inv_cell: f64,
    /// First bin whose upper edge lies above each table cell's start.
    table: Vec<usize>,
}

impl LambdaBins {
    const TABLE: usize = 4096;

    fn new(grid: &EnergyGrid, e0: f64) -> Self {
        let edges: Vec<f64> = grid.edges.iter().map(|&e| lambda_raw(e0, e).clamp(0.0, 2.0)).collect();
        let lo = edges[0];
        let hi = edges[edges.len() - 1];
        let cell = ((hi - lo) / Self::TABLE as f64).max(f64::MIN_POSITIVE);
        let table = (0..Self::TABLE)
            .map(|t| {
                let l = lo + t as f64 * cell;
                edges[1..].partition_point(|&edge| edge <= l)
            })
            .collect();
        LambdaBins {
            edges,
            lo,
            inv_cell: 1.0 / cell,
            table,
        }
    }

    #[inline]
    fn bin_of(&self, lambda: f64) -> Option<usize> {
        let nb = self.edges.len() - 1;
        if !(lambda > self.lo && lambda < self.edges[nb]) {
            return None;
        }
        let t = (((lambda - self.lo) * self.inv_cell) as usize).min(Self::TABLE - 1);
        let mut b = self.table[t];
        while b < nb && self.edges[b + 1] <= lambda {
            b += 1;
        }
        (b < nb).then_some(b)
    }

    /// Fractions of a cell with λ = `center + a s + b t`, `s, t` uniform on
    /// [-½, ½], falling in each bin. Cells partly outside the grid lose the
    /// outside part.
    fn spread(&self, center: f64, a: f64, b: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let half_range = 0.5 * (a.abs() + b.abs());
        if let (Some(lo), Some(hi)) = (self.bin_of(center - half_range), self.bin_of(center + half_range)) {
            if lo == hi {
                out.push((lo, 1.0));
                return;
            }
        }
        let w = 1.0 / (SPLAT * SPLAT) as f64;
        for p in 0..SPLAT {
            let sp = (p as f64 + 0.5) / SPLAT as f64 - 0.5;
            for q in 0..SPLAT {
                let sq = (q as f64 + 0.5) / SPLAT as f64 - 0.5;
                if let Some(bin) = self.bin_of(center + a * sp + b * sq) {
                    match out.iter_mut().find(|e| e.0 == bin) {
                        Some(e) => e.1 += w,
                        None => out.push((bin, w)),
                    }
                }
            }
        }
    }
}

/// Second-order scatter spectrum by direct summation over pairs of sites.
pub fn forward_t2_oracle(
    density: &DensityImage,
    geometry: &ScanGeometry,
    grid: &EnergyGrid,
    e0: f64,
    cfg: &OracleConfig,
) -> Result<Spectrum> {
    if density.n > 48 {
        return Err(Error::config("pairwise oracle is limited to 48x48 images"));
    }
    let nd = geometry.n_detectors();
    let nb = grid.n_bins();
    let scale = geometry.physical_scale;
    let inv = 1.0 / scale;
    let mu0 = sigma_total(e0) * N_E_WATER;
    let constant = cfg.scaling.second_order();
    let first = first_sites(density, geometry, 1);
    let offsets = subpixel_offsets(cfg.y_subsampling, density.pixel_size());
    let support_sq = geometry.support_radius * geometry.support_radius;
    let second: Vec<(Point, f64)> = first
        .iter()
        .flat_map(|&(c, v)| offsets.iter().map(move |&(ox, oy)| (c + Point::new(ox, oy), v)))
        .filter(|(p, _)| (*p * inv).norm_sq() <= support_sq)
        .collect();
    let area_x = density.pixel_area();
    let area_y = area_x / offsets.len() as f64;

    let mut counts = vec![0.0; geometry.n_pairs() * nb];
    par::for_each_chunk_mut(&mut counts, nd * nb, |i, slice| {
        let s = geometry.source(i);
        for &(x_cm, nx) in &first {
            let x = x_cm * inv;
            let b_in = x - s;
            let dsx = b_in.norm() * scale;
            let a_in = (-mu0 * ray_integral(density, s * scale, x_cm)).exp() / (dsx * dsx);
            for j in 0..nd {
                let d = geometry.detector(i, j);
                for &(y_cm, ny) in &second {
                    let y = y_cm * inv;
                    let a = y - x;
                    let r = a.norm();
                    if r <= cfg.eps_r {
                        continue;
                    }
                    let Ok((kappa, _)) = kappa_rho(a, b_in) else {
                        continue;
                    };
                    if (1.0 - kappa * kappa).sqrt() < COLLINEAR_SIN {
                        continue;
                    }
                    let Ok(p) = phi(a, d - x) else {
                        continue;
                    };
                    let cos2 = p / (1.0 + p * p).sqrt();
                    let lambda = kappa + cos2;
                    if !(lambda > 0.0 && lambda < 2.0) {
                        continue;
                    }
                    let Some(b) = grid.bin_of(energy_of_lambda(e0, lambda)) else {
                        continue;
                    };
                    let Ok(gp) = grad_phi(y, x, d) else {
                        continue;
                    };
                    let ua = a * (1.0 / r);
                    let ub = b_in * (1.0 / b_in.norm());
                    let grad = (ub - ua * kappa) * (1.0 / r) + gp * (1.0 + p * p).powf(-1.5);
                    let grad_cm = grad.norm() / scale;

                    let e1 = compton_energy(e0, kappa.clamp(-1.0, 1.0).acos());
                    let e2 = compton_energy(e1, cos2.clamp(-1.0, 1.0).acos());
                    let r_cm = r * scale;
                    let mu1 = sigma_total(e1) * N_E_WATER;
                    let a_mid = (-mu1 * ray_integral(density, x_cm, y_cm)).exp() / (r_cm * r_cm);
                    let dyd = (d - y).norm() * scale;
                    let mu2 = sigma_total(e2) * N_E_WATER;
                    let a_out = (-mu2 * ray_integral(density, y_cm, d * scale)).exp() / (dyd * dyd);
                    let f = klein_nishina_p_cos(kappa, e0) * klein_nishina_p_cos(cos2, e1) * a_in * a_mid * a_out;
                    slice[j * nb + b] += constant * nx * ny * f * grad_cm * area_x * area_y;
                }
            }
        }
    });

    let mut spec = Spectrum::zeros(geometry.n_sources(), nd, grid.clone());
    spec.counts = counts;
    spec.metadata.insert("order".into(), "2".into());
    spec.metadata.insert("method".into(), "pairwise".into());
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::disks_phantom;

    #[test]
    fn zero_phantom() {
        let g = ScanGeometry::circular(1, 4, 5.0, 0.95).unwrap();
        let grid = EnergyGrid::default_mono(16);
        let img = DensityImage::zeros(16, 10.0);
        let cfg = T2Config {
            n_omega1: 64,
            ..Default::default()
        };
        let s = forward_t2(&img, &g, &grid, 1.173, &cfg).unwrap();
        assert!(s.counts.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_coarse_quadrature() {
        let g = ScanGeometry::circular(1, 4, 5.0, 0.95).unwrap();
        let grid = EnergyGrid::default_mono(16);
        let img = DensityImage::zeros(16, 10.0);
        let cfg = T2Config {
            n_omega1: 32,
            ..Default::default()
        };
        assert!(forward_t2(&img, &g, &grid, 1.173, &cfg).is_err());
    }

    #[test]
    fn single_pixel_has_no_second_order() {
        // One occupied pixel; with eps_r above the pixel diagonal no second
        // site can carry material.
        let g = ScanGeometry::circular(1, 8, 5.0, 0.95).unwrap();
        let grid = EnergyGrid::default_mono(32);
        let mut img = DensityImage::zeros(16, 10.0);
        img.set(7, 9, 1.0);
        let h_units = img.pixel_size() / g.physical_scale;
        let cfg = T2Config {
            n_omega1: 64,
            eps_r: 0.75 * h_units,
            ..Default::default()
        };
        let s = forward_t2(&img, &g, &grid, 1.173, &cfg).unwrap();
        assert!(s.counts.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_reflection_symmetry() {
        // Source on the x axis, detector fan symmetric about it: mirroring the
        // disks across the axis swaps the two detectors.
        let g = ScanGeometry::from_parts(vec![0.0], vec![-0.3, 0.3], 5.0, 0.95).unwrap();
        let grid = EnergyGrid::default_mono(16);
        let a = disks_phantom(
            15,
            10.0,
            &[Point::new(1.0, 1.5), Point::new(-1.0, -1.0)],
            &[0.7, 0.7],
            1.0,
        )
        .unwrap();
        let b = disks_phantom(
            15,
            10.0,
            &[Point::new(1.0, -1.5), Point::new(-1.0, 1.0)],
            &[0.7, 0.7],
            1.0,
        )
        .unwrap();
        let cfg = OracleConfig {
            y_subsampling: 1,
            ..Default::default()
        };
        let sa = forward_t2_oracle(&a, &g, &grid, 1.173, &cfg).unwrap();
        let sb = forward_t2_oracle(&b, &g, &grid, 1.173, &cfg).unwrap();
        let norm = sa.counts_norm();
        assert!(norm > 0.0);
        for bin in 0..16 {
            let d = (sa.get(0, 0, bin) - sb.get(0, 1, bin)).abs();
            assert!(d <= 1e-10 * norm, "bin {bin}: {d}");
        }
    }
}
