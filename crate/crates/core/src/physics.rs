//! Compton kinematics and Klein–Nishina cross sections.
//!
//! Energies are in MeV, cross sections in cm².

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electron rest energy in MeV.
pub const ELECTRON_REST_ENERGY: f64 = 0.511;
/// Classical electron radius in cm.
pub const CLASSICAL_ELECTRON_RADIUS: f64 = 2.8179403e-13;
/// Electron density of water in cm⁻³.
pub const N_E_WATER: f64 = 3.343e23;

/// Physical constants bundled for metadata and for callers that want to
/// override them in experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConstants {
    pub electron_rest_energy: f64,
    pub classical_electron_radius: f64,
    pub n_e_water: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        PhysicsConstants {
            electron_rest_energy: ELECTRON_REST_ENERGY,
            classical_electron_radius: CLASSICAL_ELECTRON_RADIUS,
            n_e_water: N_E_WATER,
        }
    }
}

/// Photon energy after scattering by `omega`.
#[inline]
pub fn compton_energy(e0: f64, omega: f64) -> f64 {
    e0 / (1.0 + (e0 / ELECTRON_REST_ENERGY) * (1.0 - omega.cos()))
}

/// Energy after a 180° scatter, the lowest reachable by one event.
#[inline]
pub fn backscatter_energy(e0: f64) -> f64 {
    e0 / (1.0 + 2.0 * e0 / ELECTRON_REST_ENERGY)
}

/// Scattering angle that takes `e0` to `e`.
pub fn compton_angle(e0: f64, e: f64) -> Result<f64> {
    let c = 1.0 - ELECTRON_REST_ENERGY * (1.0 / e - 1.0 / e0);
    // Allow rounding at the two ends of the reachable range.
    const SLACK: f64 = 1e-12;
    if !(e > 0.0) || !(-1.0 - SLACK..=1.0 + SLACK).contains(&c) {
        return Err(Error::OutOfRange(format!(
            "energy {e} MeV not reachable from {e0} MeV by a single scatter"
        )));
    }
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// `cos ω1 + cos ω2` for a double scatter that ends at energy `e`, without
/// checking the open interval (0, 2).
#[inline]
pub fn lambda_raw(e0: f64, e: f64) -> f64 {
    2.0 - ELECTRON_REST_ENERGY * (1.0 / e - 1.0 / e0)
}

/// `cos ω1 + cos ω2` for a double scatter that ends at energy `e`.
pub fn lambda_of_e(e0: f64, e: f64) -> Result<f64> {
    let l = lambda_raw(e0, e);
    if l > 0.0 && l < 2.0 {
        Ok(l)
    } else {
        Err(Error::OutOfRange(format!("λ = {l} for E = {e} MeV is outside (0, 2)")))
    }
}

/// Final energy of a double scatter with parameter `lambda`.
#[inline]
pub fn energy_of_lambda(e0: f64, lambda: f64) -> f64 {
    1.0 / ((2.0 - lambda) / ELECTRON_REST_ENERGY + 1.0 / e0)
}

/// Second scattering angle compatible with `omega1` and `lambda`, if any.
#[inline]
pub fn omega2_of_omega1(omega1: f64, lambda: f64) -> Option<f64> {
    let c = lambda - omega1.cos();
    if (-1.0..=1.0).contains(&c) {
        Some(c.acos())
    } else {
        None
    }
}

/// Klein–Nishina angular factor, normalized so that `r_e² P` is the
/// differential cross section per electron and `P(0) = 1`.
#[inline]
pub fn klein_nishina_p(omega: f64, e0: f64) -> f64 {
    let k = compton_energy(e0, omega) / e0;
    let s = omega.sin();
    0.5 * k * k * (k + 1.0 / k - s * s)
}

/// [`klein_nishina_p`] from the cosine of the angle.
#[inline]
pub fn klein_nishina_p_cos(cos_omega: f64, e0: f64) -> f64 {
    let k = 1.0 / (1.0 + (e0 / ELECTRON_REST_ENERGY) * (1.0 - cos_omega));
    0.5 * k * k * (k + 1.0 / k - (1.0 - cos_omega * cos_omega))
}

/// Total Klein–Nishina cross section per electron in cm².
pub fn sigma_total(e: f64) -> f64 {
    let eps = e / ELECTRON_REST_ENERGY;
    let l = (1.0 + 2.0 * eps).ln();
    let one2 = 1.0 + 2.0 * eps;
    let bracket = (1.0 + eps) / (eps * eps) * (2.0 * (1.0 + eps) / one2 - l / eps) + l / (2.0 * eps)
        - (1.0 + 3.0 * eps) / (one2 * one2);
    2.0 * PI * CLASSICAL_ELECTRON_RADIUS * CLASSICAL_ELECTRON_RADIUS * bracket
}

/// Linear attenuation of water at energy `e`, in cm⁻¹.
#[inline]
pub fn mu_water(e: f64) -> f64 {
    sigma_total(e) * N_E_WATER
}

/// Discrete source spectrum: energy levels with weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySource {
    /// `(E0_k, c_k)`, strictly increasing in energy.
    pub levels: Vec<(f64, f64)>,
    /// Photons emitted per source position (all levels together).
    pub total_intensity: f64,
}

impl PolySource {
    /// Normalizes the weights and checks ordering. Level spacing is checked
    /// against a detector resolution by [`PolySource::check_resolution`].
    pub fn new(levels: Vec<(f64, f64)>, total_intensity: f64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::config("source needs at least one energy level"));
        }
        if levels.iter().any(|&(e, c)| !(e > 0.0) || !(c > 0.0)) {
            return Err(Error::config("source levels need positive energy and weight"));
        }
        if levels.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("source levels must be strictly increasing"));
        }
        let sum: f64 = levels.iter().map(|l| l.1).sum();
        let levels = levels.into_iter().map(|(e, c)| (e, c / sum)).collect();
        Ok(PolySource {
            levels,
            total_intensity,
        })
    }

    pub fn mono(e0: f64, total_intensity: f64) -> Result<Self> {
        Self::new(vec![(e0, 1.0)], total_intensity)
    }

    /// Cobalt-60 with its two gamma lines at equal weight.
    pub fn cobalt60(total_intensity: f64) -> Self {
        Self::new(vec![(1.173, 0.5), (1.332, 0.5)], total_intensity).expect("cobalt-60 levels are valid")
    }

    /// Every pair of adjacent levels must be at least `delta_e` apart so the
    /// ballistic peaks stay separable.
    pub fn check_resolution(&self, delta_e: f64) -> Result<()> {
        for w in self.levels.windows(2) {
            if w[1].0 - w[0].0 < delta_e {
                return Err(Error::config(format!(
                    "source levels {} and {} MeV are closer than the bin width {delta_e} MeV",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(())
    }

    pub fn max_energy(&self) -> f64 {
        self.levels.last().map(|l| l.0).unwrap_or(0.0)
    }

    pub fn min_energy(&self) -> f64 {
        self.levels.first().map(|l| l.0).unwrap_or(0.0)
    }
}
