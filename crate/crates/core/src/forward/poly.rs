use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ray::xray_transform;
use crate::forward::t1::forward_t1;
use crate::forward::t2::{forward_t2, T2Config};
use crate::forward::{EnergyGrid, Scaling, Spectrum};
use crate::geometry::{ScanGeometry, DEFAULT_EPS_R};
use crate::image::DensityImage;
use crate::physics::PolySource;

/// Sampling parameters shared by all scatter orders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardOptions {
    /// First-order samples per pixel side.
    pub subsampling: usize,
    pub n_omega1: usize,
    /// Minimum distance between the two scattering sites, geometry units.
    pub eps_r: f64,
    pub delta: f64,
    /// Second-order sample spacing along outgoing rays, in pixels.
    pub radial_step: f64,
    pub first_site_stride: usize,
    pub scaling: Scaling,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            subsampling: 2,
            n_omega1: 256,
            eps_r: DEFAULT_EPS_R,
            delta: 1e-3,
            radial_step: 0.25,
            first_site_stride: 1,
            scaling: Scaling::default(),
        }
    }
}

impl ForwardOptions {
    pub fn t2(&self) -> T2Config {
        T2Config {
            n_omega1: self.n_omega1,
            eps_r: self.eps_r,
            delta: self.delta,
            radial_step: self.radial_step,
            first_site_stride: self.first_site_stride,
            scaling: self.scaling,
        }
    }
}

/// Largest bin width of the grid.
pub(crate) fn resolution(grid: &EnergyGrid) -> f64 {
    (0..grid.n_bins()).map(|b| grid.width(b)).fold(0.0, f64::max)
}

/// Weighted sum over source levels of one scatter order.
///
/// Order 0 fills only the ballistic channel (one block per level); orders 1
/// and 2 fill only the energy bins, so the three orders add up to the full
/// measurement.
pub fn forward_poly(
    density: &DensityImage,
    geometry: &ScanGeometry,
    grid: &EnergyGrid,
    source: &PolySource,
    order: u8,
    opts: &ForwardOptions,
) -> Result<Spectrum> {
    source.check_resolution(resolution(grid))?;
    let n_levels = source.levels.len();
    let mut out = Spectrum::zeros_levels(geometry.n_sources(), geometry.n_detectors(), grid.clone(), n_levels);
    let m = geometry.n_pairs();
    for (k, &(e0, c)) in source.levels.iter().enumerate() {
        match order {
            0 => {
                let g0 = xray_transform(density, geometry, e0, &opts.scaling);
                for (dst, v) in out.ballistic[k * m..(k + 1) * m].iter_mut().zip(g0) {
                    *dst = c * v;
                }
            }
            1 | 2 => {
                let part = if order == 1 {
                    forward_t1(density, geometry, grid, e0, opts.subsampling, &opts.scaling)
                } else {
                    forward_t2(density, geometry, grid, e0, &opts.t2())?
                };
                for (dst, v) in out.counts.iter_mut().zip(&part.counts) {
                    *dst += c * v;
                }
            }
            _ => return Err(Error::config(format!("scatter order {order} not modelled"))),
        }
    }
    out.metadata.insert("order".into(), order.to_string());
    out.metadata.insert(
        "levels".into(),
        source
            .levels
            .iter()
            .map(|(e, c)| format!("{e}:{c}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.metadata.insert("scaling".into(), opts.scaling.describe());
    Ok(out)
}
