//! Test objects: a thorax-like ellipse phantom, a metal ring around a
//! cracked plastic block, and sums of small disks.
//!
//! Shapes are given in cm and rasterized at pixel centers. Each shape either
//! paints over what is below it or adds to it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::image::DensityImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    /// Overwrite the value below.
    #[default]
    Paint,
    /// Add to the value below.
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Ellipse {
        center: [f64; 2],
        /// Semi-axes along the rotated x and y directions.
        semi_axes: [f64; 2],
        #[serde(default)]
        angle_deg: f64,
        density: f64,
        #[serde(default)]
        blend: Blend,
    },
    Annulus {
        center: [f64; 2],
        inner: f64,
        outer: f64,
        density: f64,
        #[serde(default)]
        blend: Blend,
    },
    /// Axis-aligned rectangle given by its full extents.
    Rect {
        center: [f64; 2],
        size: [f64; 2],
        density: f64,
        #[serde(default)]
        blend: Blend,
    },
}

impl Shape {
    fn contains(&self, p: Point) -> bool {
        match *self {
            Shape::Ellipse {
                center,
                semi_axes,
                angle_deg,
                ..
            } => {
                let q = (p - Point::new(center[0], center[1])).rotated(-angle_deg.to_radians());
                let u = q.x / semi_axes[0];
                let v = q.y / semi_axes[1];
                u * u + v * v <= 1.0
            }
            Shape::Annulus {
                center, inner, outer, ..
            } => {
                let r = (p - Point::new(center[0], center[1])).norm();
                r >= inner && r <= outer
            }
            Shape::Rect { center, size, .. } => {
                (p.x - center[0]).abs() <= 0.5 * size[0] && (p.y - center[1]).abs() <= 0.5 * size[1]
            }
        }
    }

    fn density(&self) -> f64 {
        match *self {
            Shape::Ellipse { density, .. } | Shape::Annulus { density, .. } | Shape::Rect { density, .. } => density,
        }
    }

    fn blend(&self) -> Blend {
        match *self {
            Shape::Ellipse { blend, .. } | Shape::Annulus { blend, .. } | Shape::Rect { blend, .. } => blend,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Ellipse { semi_axes, .. } => semi_axes[0] > 0.0 && semi_axes[1] > 0.0,
            Shape::Annulus { inner, outer, .. } => inner >= 0.0 && outer > inner,
            Shape::Rect { size, .. } => size[0] > 0.0 && size[1] > 0.0,
        };
        if !ok {
            return Err(Error::config(format!("non-positive extent in {self:?}")));
        }
        if !(self.density() >= 0.0) {
            return Err(Error::config(format!("negative density in {self:?}")));
        }
        Ok(())
    }
}

/// Phantom description as stored in a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Field of view in cm.
    pub fov: f64,
    pub shapes: Vec<Shape>,
}

impl PhantomSpec {
    pub fn rasterize(&self, n: usize) -> Result<DensityImage> {
        if n == 0 {
            return Err(Error::config("image size must be positive"));
        }
        for s in &self.shapes {
            s.validate()?;
        }
        let mut img = DensityImage::zeros(n, self.fov);
        for r in 0..n {
            for c in 0..n {
                let p = img.pixel_center(r, c);
                let mut v = 0.0;
                for s in &self.shapes {
                    if s.contains(p) {
                        v = match s.blend() {
                            Blend::Paint => s.density(),
                            Blend::Add => v + s.density(),
                        };
                    }
                }
                img.set(r, c, v);
            }
        }
        Ok(img)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Thorax densities per ellipse, in paint order.
pub const THORAX_DENSITIES: [f64; 9] = [0.907, 0.380, 0.380, 1.190, 1.300, 1.116, 1.784, 1.077, 1.784];
pub const THORAX_FOV: f64 = 35.0;

/// Reference thorax: body outline 28.4 × 21.3 cm, two lungs, heart, aorta,
/// paraspinal muscle, vertebra with spinal canal, sternum.
pub fn thorax_spec() -> PhantomSpec {
    let d = THORAX_DENSITIES;
    let e = |cx: f64, cy: f64, a: f64, b: f64, angle: f64, density: f64| Shape::Ellipse {
        center: [cx, cy],
        semi_axes: [a, b],
        angle_deg: angle,
        density,
        blend: Blend::Paint,
    };
    PhantomSpec {
        fov: THORAX_FOV,
        shapes: vec![
            e(0.0, 0.0, 14.2, 10.65, 0.0, d[0]),
            e(-6.2, 1.0, 4.4, 7.2, 8.0, d[1]),
            e(6.2, 1.0, 4.4, 7.2, -8.0, d[2]),
            e(-1.2, 0.6, 3.6, 2.9, 35.0, d[3]),
            e(1.8, 3.4, 1.3, 1.3, 0.0, d[4]),
            e(0.0, -6.9, 3.2, 1.9, 0.0, d[5]),
            e(0.0, -7.2, 1.5, 1.4, 0.0, d[6]),
            e(0.0, -7.0, 0.55, 0.55, 0.0, d[7]),
            e(0.0, 9.4, 1.6, 0.65, 0.0, d[8]),
        ],
    }
}

pub fn thorax_phantom(n: usize) -> Result<DensityImage> {
    if n < 16 {
        return Err(Error::config("thorax phantom needs n >= 16"));
    }
    thorax_spec().rasterize(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metal {
    Aluminium,
    Iron,
}

impl Metal {
    pub fn density(self) -> f64 {
        match self {
            Metal::Aluminium => 2.34,
            Metal::Iron => 6.70,
        }
    }
}

pub const RING_FOV: f64 = 7.1;
pub const RING_INNER: f64 = 3.0;
pub const RING_OUTER: f64 = 3.5;
pub const PE_DENSITY: f64 = 0.972;
/// Crack width in cm.
pub const CRACK_WIDTH: f64 = 0.1;

/// Metal annulus around a polyethylene block with a vertical crack through
/// its middle.
pub fn ring_spec(metal: Metal) -> PhantomSpec {
    PhantomSpec {
        fov: RING_FOV,
        shapes: vec![
            Shape::Annulus {
                center: [0.0, 0.0],
                inner: RING_INNER,
                outer: RING_OUTER,
                density: metal.density(),
                blend: Blend::Paint,
            },
            Shape::Rect {
                center: [0.0, 0.0],
                size: [1.5, 1.25],
                density: PE_DENSITY,
                blend: Blend::Paint,
            },
            Shape::Rect {
                center: [0.0, 0.0],
                size: [CRACK_WIDTH, 1.25],
                density: 0.0,
                blend: Blend::Paint,
            },
        ],
    }
}

pub fn ring_phantom(n: usize, metal: Metal) -> Result<DensityImage> {
    if n < 16 {
        return Err(Error::config("ring phantom needs n >= 16"));
    }
    ring_spec(metal).rasterize(n)
}

/// Sum of disks with a common density; overlapping disks add.
pub fn disks_phantom(n: usize, fov: f64, centers: &[Point], radii: &[f64], density: f64) -> Result<DensityImage> {
    if centers.len() != radii.len() {
        return Err(Error::shape("one radius per disk center"));
    }
    let shapes = centers
        .iter()
        .zip(radii)
        .map(|(c, &r)| Shape::Ellipse {
            center: [c.x, c.y],
            semi_axes: [r, r],
            angle_deg: 0.0,
            density,
            blend: Blend::Add,
        })
        .collect();
    PhantomSpec { fov, shapes }.rasterize(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn thorax_values_from_table() {
        let img = thorax_phantom(128).unwrap();
        assert_eq!(img.max(), 1.784);
        let center = img.get(64, 64);
        assert!(THORAX_DENSITIES.contains(&center) || center == 0.0);
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(64, 2), 0.0);
        assert!(img.values.iter().all(|&v| v == 0.0 || THORAX_DENSITIES.contains(&v)));
    }

    #[test]
    fn thorax_outline_diameters() {
        let img = thorax_phantom(350).unwrap();
        // Row through the center: 28.4 cm of material.
        let row = 175;
        let width = (0..350).filter(|&c| img.get(row, c) > 0.0).count() as f64 * img.pixel_size();
        assert!((width - 28.4).abs() <= 0.2, "{width}");
        let col = 175;
        let height = (0..350).filter(|&r| img.get(r, col) > 0.0).count() as f64 * img.pixel_size();
        assert!((height - 21.3).abs() <= 0.2, "{height}");
    }

    #[test]
    fn ring_values() {
        let al = ring_phantom(142, Metal::Aluminium).unwrap();
        let p = al.pixel_of(Point::new(3.25, 0.0)).unwrap();
        assert_eq!(al.get(p.0, p.1), 2.34);
        let p = al.pixel_of(Point::new(0.0, 0.3)).unwrap();
        assert_eq!(al.get(p.0, p.1), 0.0);
        let p = al.pixel_of(Point::new(0.4, 0.3)).unwrap();
        assert_eq!(al.get(p.0, p.1), PE_DENSITY);
        let fe = ring_phantom(142, Metal::Iron).unwrap();
        let p = fe.pixel_of(Point::new(0.0, -3.25)).unwrap();
        assert_eq!(fe.get(p.0, p.1), 6.70);
    }

    #[test]
    fn disks_mass() {
        let img = disks_phantom(256, 2.0, &[Point::new(0.1, 0.2)], &[0.3], 1.5).unwrap();
        let exact = 1.5 * std::f64::consts::PI * 0.09;
        let ring = 1.5 * 2.0 * std::f64::consts::PI * 0.3 * img.pixel_size();
        assert!((img.mass() - exact).abs() < ring);
        let empty = disks_phantom(16, 2.0, &[], &[], 1.0).unwrap();
        assert_eq!(empty.mass(), 0.0);
    }

    #[test]
    fn disks_additive() {
        let a = disks_phantom(64, 2.0, &[Point::new(-0.5, 0.0)], &[0.2], 1.0).unwrap();
        let b = disks_phantom(64, 2.0, &[Point::new(0.5, 0.0)], &[0.2], 1.0).unwrap();
        let ab = disks_phantom(
            64,
            2.0,
            &[Point::new(-0.5, 0.0), Point::new(0.5, 0.0)],
            &[0.2, 0.2],
            1.0,
        )
        .unwrap();
        assert_eq!(ab.mass(), a.mass() + b.mass());
    }

    #[test]
    fn toml_roundtrip() {
        let spec = thorax_spec();
        let text = spec.to_toml().unwrap();
        let back = PhantomSpec::from_toml(&text).unwrap();
        assert_eq!(back, spec);
        assert_relative_eq!(back.rasterize(32).unwrap().mass(), spec.rasterize(32).unwrap().mass());
    }
}
