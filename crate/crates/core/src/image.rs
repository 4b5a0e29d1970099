use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Square electron-density map relative to water, centered at the origin.
///
/// Pixel `(row, col)` is stored at `row * n + col`; row 0 is the top of the
/// image (largest `y`). Coordinates are in cm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityImage {
    pub n: usize,
    /// Side length of the square field of view in cm.
    pub fov: f64,
    pub values: Vec<f64>,
}

impl DensityImage {
    pub fn zeros(n: usize, fov: f64) -> Self {
        DensityImage {
            n,
            fov,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_values(n: usize, fov: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::shape(format!("{} values for a {n}x{n} image", values.len())));
        }
        if !(fov > 0.0) {
            return Err(Error::config("field of view must be positive"));
        }
        Ok(DensityImage { n, fov, values })
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.n, self.fov, values)
    }

    #[inline]
    pub fn pixel_size(&self) -> f64 {
        self.fov / self.n as f64
    }

    #[inline]
    pub fn pixel_area(&self) -> f64 {
        let h = self.pixel_size();
        h * h
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.n + col] = v;
    }

    /// Center of pixel `(row, col)` in cm.
    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> Point {
        let h = self.pixel_size();
        let half = 0.5 * self.fov;
        Point::new(-half + (col as f64 + 0.5) * h, half - (row as f64 + 0.5) * h)
    }

    /// Pixel containing `p` (cm), if inside the field of view.
    #[inline]
    pub fn pixel_of(&self, p: Point) -> Option<(usize, usize)> {
        let half = 0.5 * self.fov;
        let inv_h = self.n as f64 / self.fov;
        let c = ((p.x + half) * inv_h).floor();
        let r = ((half - p.y) * inv_h).floor();
        let n = self.n as f64;
        if c >= 0.0 && c < n && r >= 0.0 && r < n {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    /// Nearest-pixel value at `p` (cm); zero outside the field of view.
    #[inline]
    pub fn value_at(&self, p: Point) -> f64 {
        match self.pixel_of(p) {
            Some((r, c)) => self.values[r * self.n + c],
            None => 0.0,
        }
    }

    /// Σ values · pixel area, in cm².
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.pixel_area()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest distance from the origin of a pixel center with a nonzero
    /// value, in cm.
    pub fn support_extent(&self) -> f64 {
        let mut m: f64 = 0.0;
        for r in 0..self.n {
            for c in 0..self.n {
                if self.get(r, c) != 0.0 {
                    m = m.max(self.pixel_center(r, c).norm());
                }
            }
        }
        m
    }

    /// Zero every pixel whose center lies outside the disk of radius
    /// `radius` cm.
    pub fn mask_disk(&mut self, radius: f64) {
        let r2 = radius * radius;
        for r in 0..self.n {
            for c in 0..self.n {
                if self.pixel_center(r, c).norm_sq() > r2 {
                    self.set(r, c, 0.0);
                }
            }
        }
    }

    /// Separable Gaussian blur with replicate boundary.
    pub fn gaussian_blur(&self, sigma_px: f64) -> DensityImage {
        if sigma_px <= 0.0 {
            return self.clone();
        }
        let rad = (3.0 * sigma_px).ceil() as isize;
        let kernel: Vec<f64> = (-rad..=rad)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma_px * sigma_px)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let n = self.n as isize;
        let clamp = |i: isize| i.clamp(0, n - 1) as usize;
        let mut tmp = vec![0.0; self.values.len()];
        for r in 0..self.n {
            for c in 0..self.n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * self.get(r, clamp(c as isize + k as isize - rad));
                }
                tmp[r * self.n + c] = acc / norm;
            }
        }
        let mut out = vec![0.0; self.values.len()];
        for r in 0..self.n {
            for c in 0..self.n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * tmp[clamp(r as isize + k as isize - rad) * self.n + c];
                }
                out[r * self.n + c] = acc / norm;
            }
        }
        DensityImage {
            n: self.n,
            fov: self.fov,
            values: out,
        }
    }
}
