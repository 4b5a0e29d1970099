//! Forward models: ballistic transmission, first- and second-order scatter,
//! polychromatic sums and Poisson noise.
//!
//! Every spectrum is bin-integrated: a bin holds the expected number of
//! photons whose final energy falls inside it, per emitted photon unless a
//! noise budget has been applied.

mod noise;
mod poly;
mod ray;
mod t1;
mod t2;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{CLASSICAL_ELECTRON_RADIUS, N_E_WATER};

pub use noise::{add_poisson_noise, relative_noise};
pub use poly::{forward_poly, ForwardOptions};
pub(crate) use ray::walk_ray;
pub use ray::{
    attenuation_factor, ray_integral, ray_integral_with_step, unattenuated, xray_log_projection, xray_transform,
    AttenuationContext,
};
pub use t1::{forward_t1, forward_t1_frozen, T1Kernel};
pub use t2::{forward_t2, forward_t2_oracle, OracleConfig, T2Config};

/// Monotone energy bin edges in MeV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub edges: Vec<f64>,
}

impl EnergyGrid {
    pub fn uniform(e_min: f64, e_max: f64, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || !(e_min > 0.0) || !(e_max > e_min) {
            return Err(Error::config(format!(
                "invalid energy grid [{e_min}, {e_max}] with {n_bins} bins"
            )));
        }
        let w = (e_max - e_min) / n_bins as f64;
        let mut edges: Vec<f64> = (0..=n_bins).map(|k| e_min + k as f64 * w).collect();
        edges[n_bins] = e_max;
        Ok(EnergyGrid { edges })
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || !(edges[0] > 0.0) {
            return Err(Error::config("energy edges must be positive and strictly increasing"));
        }
        Ok(EnergyGrid { edges })
    }

    /// Default measured range for a 1.173 MeV source.
    pub fn default_mono(n_bins: usize) -> Self {
        Self::uniform(0.355, 1.173, n_bins).expect("default grid")
    }

    #[inline]
    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn e_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn e_max(&self) -> f64 {
        self.edges[self.n_bins()]
    }

    pub fn midpoint(&self, b: usize) -> f64 {
        0.5 * (self.edges[b] + self.edges[b + 1])
    }

    pub fn width(&self, b: usize) -> f64 {
        self.edges[b + 1] - self.edges[b]
    }

    /// Bin containing `e`; the upper edge belongs to the last bin.
    #[inline]
    pub fn bin_of(&self, e: f64) -> Option<usize> {
        let n = self.n_bins();
        if !(e >= self.edges[0] && e <= self.edges[n]) {
            return None;
        }
        if e == self.edges[n] {
            return Some(n - 1);
        }
        // First edge strictly greater than e.
        let k = self.edges.partition_point(|&x| x <= e);
        Some(k - 1)
    }

    /// Common bin width if the grid is uniform to 1e-9 relative.
    pub fn uniform_width(&self) -> Option<f64> {
        let w = (self.e_max() - self.e_min()) / self.n_bins() as f64;
        let ok = (0..self.n_bins()).all(|b| (self.width(b) - w).abs() <= 1e-9 * w);
        ok.then_some(w)
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(b"grid-v1");
        for e in &self.edges {
            h.update(e.to_le_bytes());
        }
        crate::geometry::hex16(&h.finalize())
    }
}

/// Physical normalization shared by all orders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scaling {
    /// Photons emitted per source position.
    pub intensity: f64,
    /// Detector area in cm².
    pub detector_area: f64,
    /// Slice thickness in cm; turns pixel areas into volumes.
    pub slice_thickness: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling {
            intensity: 1.0,
            detector_area: 1.0,
            slice_thickness: 1.0,
        }
    }
}

impl Scaling {
    /// Fraction of emitted photons per steradian times detector area.
    #[inline]
    pub fn emission(&self) -> f64 {
        self.intensity * self.detector_area / (4.0 * PI)
    }

    /// Probability scale of one scattering event per unit relative density
    /// and unit area: `r_e² · n_e(water) · thickness`.
    #[inline]
    pub fn coupling(&self) -> f64 {
        CLASSICAL_ELECTRON_RADIUS * CLASSICAL_ELECTRON_RADIUS * N_E_WATER * self.slice_thickness
    }

    /// Constant in front of the first-order sum.
    #[inline]
    pub fn first_order(&self) -> f64 {
        self.emission() * self.coupling()
    }

    /// Constant in front of the second-order sum. The arc-length measure of
    /// the second site carries one length dimension fewer than an area, made
    /// up by a 1 cm reference length.
    #[inline]
    pub fn second_order(&self) -> f64 {
        self.emission() * self.coupling() * self.coupling()
    }

    pub fn describe(&self) -> String {
        format!(
            "intensity={} detector_area_cm2={} slice_thickness_cm={} r_e_cm={} n_e_water_cm3={}",
            self.intensity, self.detector_area, self.slice_thickness, CLASSICAL_ELECTRON_RADIUS, N_E_WATER
        )
    }
}

/// Bin-integrated counts per (source, detector, energy bin) plus the
/// ballistic channel, one `(source, detector)` block per source level.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub n_sources: usize,
    pub n_detectors: usize,
    pub grid: EnergyGrid,
    /// Number of ballistic blocks (source energy levels).
    pub n_levels: usize,
    /// `[level][source][detector]`.
    pub ballistic: Vec<f64>,
    /// `[source][detector][bin]`.
    pub counts: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl Spectrum {
    pub fn zeros(n_sources: usize, n_detectors: usize, grid: EnergyGrid) -> Self {
        Self::zeros_levels(n_sources, n_detectors, grid, 1)
    }

    pub fn zeros_levels(n_sources: usize, n_detectors: usize, grid: EnergyGrid, n_levels: usize) -> Self {
        let nb = grid.n_bins();
        Spectrum {
            n_sources,
            n_detectors,
            grid,
            n_levels,
            ballistic: vec![0.0; n_levels * n_sources * n_detectors],
            counts: vec![0.0; n_sources * n_detectors * nb],
            metadata: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn n_bins(&self) -> usize {
        self.grid.n_bins()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, b: usize) -> usize {
        (i * self.n_detectors + j) * self.n_bins() + b
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, b: usize) -> f64 {
        self.counts[self.index(i, j, b)]
    }

    /// Energy spectrum of one source/detector pair.
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let nb = self.n_bins();
        let start = (i * self.n_detectors + j) * nb;
        &self.counts[start..start + nb]
    }

    /// Ballistic block of one source level.
    pub fn ballistic_level(&self, level: usize) -> &[f64] {
        let m = self.n_sources * self.n_detectors;
        &self.ballistic[level * m..(level + 1) * m]
    }

    pub fn same_shape(&self, other: &Spectrum) -> bool {
        self.n_sources == other.n_sources
            && self.n_detectors == other.n_detectors
            && self.n_levels == other.n_levels
            && self.grid == other.grid
    }

    /// Element-wise `self + k·other` over counts and ballistic channel.
    pub fn add_scaled(&mut self, other: &Spectrum, k: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape("spectra with different shapes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += k * b;
        }
        for (a, b) in self.ballistic.iter_mut().zip(&other.ballistic) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Spectrum {
        let mut s = self.clone();
        s.counts.iter_mut().for_each(|v| *v *= k);
        s.ballistic.iter_mut().for_each(|v| *v *= k);
        s
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn counts_norm(&self) -> f64 {
        self.counts.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Sample offsets of an `k×k` sub-grid inside a pixel of size `h`.
pub(crate) fn subpixel_offsets(k: usize, h: f64) -> Vec<(f64, f64)> {
    let k = k.max(1);
    let step = h / k as f64;
    let mut out = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            out.push((-0.5 * h + (b as f64 + 0.5) * step, 0.5 * h - (a as f64 + 0.5) * step));
        }
    }
    out
}
