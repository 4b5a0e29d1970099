use crate::error::{Error, Result};
use crate::forward::Scaling;
use crate::geometry::{Point, ScanGeometry};
use crate::image::DensityImage;
use crate::par;
use crate::physics::{sigma_total, N_E_WATER};

/// Clip the segment `a → b` to the square `[-half, half]²`; returns the
/// parameter interval inside it.
fn clip_to_square(a: Point, b: Point, half: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-d.x, a.x + half),
        (d.x, half - a.x),
        (-d.y, a.y + half),
        (d.y, half - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// `∫ n_e dl` along `a → b` with both points in cm, by midpoint sampling at
/// steps of at most half a pixel. The result is in cm (relative density
/// times length).
pub fn ray_integral(density: &DensityImage, a: Point, b: Point) -> f64 {
    ray_integral_with_step(density, a, b, 0.5 * density.pixel_size())
}

pub fn ray_integral_with_step(density: &DensityImage, a: Point, b: Point, max_step: f64) -> f64 {
    let mut acc = 0.0;
    walk_ray(density.fov, a, b, max_step, |p, w| acc += w * density.value_at(p));
    acc
}

/// Visit the midpoint samples used by [`ray_integral_with_step`], each with
/// its share of the clipped length.
pub(crate) fn walk_ray(fov: f64, a: Point, b: Point, max_step: f64, mut visit: impl FnMut(Point, f64)) {
    let Some((t0, t1)) = clip_to_square(a, b, 0.5 * fov) else {
        return;
    };
    let d = b - a;
    let len = d.norm() * (t1 - t0);
    if len == 0.0 {
        return;
    }
    let n = (len / max_step).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / n as f64;
    let w = len / n as f64;
    for k in 0..n {
        visit(a + d * (t0 + (k as f64 + 0.5) * dt), w);
    }
}

/// Density and energy fixing the attenuation of a segment.
#[derive(Clone, Copy, Debug)]
pub struct AttenuationContext<'a> {
    pub density: &'a DensityImage,
    /// Photon energy in MeV.
    pub energy: f64,
    /// cm per geometry unit.
    pub physical_scale: f64,
}

/// `|a - b|⁻² · exp(-∫ μ_E)` for `a`, `b` in geometry units; the distance is
/// converted to cm, so the result is in cm⁻².
pub fn attenuation_factor(ctx: &AttenuationContext<'_>, a: Point, b: Point) -> Result<f64> {
    let dist = (b - a).norm() * ctx.physical_scale;
    if dist == 0.0 {
        return Err(Error::domain("attenuation factor of a zero-length segment"));
    }
    let l = ray_integral(ctx.density, a * ctx.physical_scale, b * ctx.physical_scale);
    Ok((-sigma_total(ctx.energy) * N_E_WATER * l).exp() / (dist * dist))
}

/// `∫ n_e dl` in cm for every source/detector pair, source-major.
pub fn xray_log_projection(density: &DensityImage, geometry: &ScanGeometry) -> Vec<f64> {
    let nd = geometry.n_detectors();
    let k = geometry.physical_scale;
    par::map_range(geometry.n_pairs(), |idx| {
        let (i, j) = (idx / nd, idx % nd);
        ray_integral(density, geometry.source(i) * k, geometry.detector(i, j) * k)
    })
}

/// Ballistic counts `I_s · exp(-σ(E0) n_e(water) ∫ n_e)` with the unattenuated
/// intensity `I_s` from inverse-square dispersion.
pub fn xray_transform(density: &DensityImage, geometry: &ScanGeometry, e0: f64, scaling: &Scaling) -> Vec<f64> {
    let mu = sigma_total(e0) * N_E_WATER;
    let proj = xray_log_projection(density, geometry);
    let nd = geometry.n_detectors();
    proj.iter()
        .enumerate()
        .map(|(idx, l)| unattenuated(geometry, idx / nd, idx % nd, scaling) * (-mu * l).exp())
        .collect()
}

/// Ballistic counts through vacuum for pair `(i, j)`.
pub fn unattenuated(geometry: &ScanGeometry, i: usize, j: usize, scaling: &Scaling) -> f64 {
    let dist = (geometry.detector(i, j) - geometry.source(i)).norm() * geometry.physical_scale;
    scaling.emission() / (dist * dist)
}

/// Line integrals from every pixel center to a fixed point, bilinearly
/// interpolated in between.
pub(crate) struct LineIntegralMap {
    n: usize,
    fov: f64,
    values: Vec<f64>,
}

impl LineIntegralMap {
    /// `target` in cm.
    pub fn new(density: &DensityImage, target: Point) -> Self {
        let n = density.n;
        let mut values = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                values.push(ray_integral(density, density.pixel_center(r, c), target));
            }
        }
        LineIntegralMap {
            n,
            fov: density.fov,
            values,
        }
    }

    /// Bilinear interpolation at `p` (cm); clamped at the outer pixel
    /// centers.
    #[inline]
    pub fn at(&self, p: Point) -> f64 {
        let n = self.n;
        let h = self.fov / n as f64;
        let fx = ((p.x + 0.5 * self.fov) / h - 0.5).clamp(0.0, (n - 1) as f64);
        let fy = ((0.5 * self.fov - p.y) / h - 0.5).clamp(0.0, (n - 1) as f64);
        let c0 = (fx.floor() as usize).min(n.saturating_sub(2));
        let r0 = (fy.floor() as usize).min(n.saturating_sub(2));
        let (c1, r1) = ((c0 + 1).min(n - 1), (r0 + 1).min(n - 1));
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let v = |r: usize, c: usize| self.values[r * n + c];
        (1.0 - ty) * ((1.0 - tx) * v(r0, c0) + tx * v(r0, c1)) + ty * ((1.0 - tx) * v(r1, c0) + tx * v(r1, c1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::disks_phantom;
    use approx::assert_relative_eq;

    #[test]
    fn clipping() {
        assert!(clip_to_square(Point::new(2.0, 2.0), Point::new(3.0, 2.0), 1.0).is_none());
        let (t0, t1) = clip_to_square(Point::new(-2.0, 0.0), Point::new(2.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(t0, 0.25);
        assert_relative_eq!(t1, 0.75);
    }

    #[test]
    fn vacuum_attenuation() {
        let img = DensityImage::zeros(8, 4.0);
        let ctx = AttenuationContext {
            density: &img,
            energy: 1.0,
            physical_scale: 1.0,
        };
        let a = attenuation_factor(&ctx, Point::new(-1.0, 0.0), Point::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(a, 0.25);
        assert!(attenuation_factor(&ctx, Point::ZERO, Point::ZERO).is_err());
    }

    #[test]
    fn map_matches_direct_at_centers() {
        let img = disks_phantom(16, 4.0, &[Point::new(0.3, -0.2)], &[0.9], 1.0).unwrap();
        let target = Point::new(-1.9, 0.4);
        let map = LineIntegralMap::new(&img, target);
        let c = img.pixel_center(5, 9);
        assert_relative_eq!(map.at(c), ray_integral(&img, c, target), max_relative = 1e-12);
    }
}
