//! Smoothed energy derivative applied along every spectrum row.
//!
//! The filter `iζ·exp(-(γζ)²/2)` is applied through a discrete Fourier
//! transform of the row. Because the map is linear and rows are short, it is
//! stored as a dense `n_bins × n_bins` matrix; its transpose is then the
//! exact adjoint.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{EnergyGrid, Spectrum};
use crate::par;
use crate::sparse::{Fingerprints, SparseOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Mirror the row before transforming (no wrap-around jump).
    Reflect,
    /// Treat the row as one period.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeConfig {
    /// Filter scale in MeV.
    pub gamma: f64,
    pub filter: Filter,
    pub boundary: Boundary,
}

impl DerivativeConfig {
    /// `γ = 3ΔE` with reflecting boundaries.
    pub fn default_for(grid: &EnergyGrid) -> Result<Self> {
        let w = uniform_width(grid)?;
        Ok(DerivativeConfig {
            gamma: 3.0 * w,
            filter: Filter::Gaussian,
            boundary: Boundary::Reflect,
        })
    }

    fn gain(&self, zeta: f64) -> f64 {
        match self.filter {
            Filter::Gaussian => (-0.5 * (self.gamma * zeta).powi(2)).exp(),
        }
    }
}

fn uniform_width(grid: &EnergyGrid) -> Result<f64> {
    grid.uniform_width()
        .ok_or_else(|| Error::config("smoothed derivative needs a uniform energy grid"))
}

/// Dense matrix of the smoothed derivative for rows of a fixed length.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivative {
    n: usize,
    /// Row-major `n × n`.
    matrix: Vec<f64>,
    pub config: DerivativeConfig,
}

impl Derivative {
    pub fn new(n: usize, bin_width: f64, config: DerivativeConfig) -> Result<Self> {
        if n < 4 {
            return Err(Error::config(format!(
                "smoothed derivative needs at least 4 bins, got {n}"
            )));
        }
        if !(config.gamma >= 0.0) || !(bin_width > 0.0) {
            return Err(Error::config("gamma must be nonnegative and the bin width positive"));
        }
        let period = match config.boundary {
            Boundary::Reflect => 2 * n,
            Boundary::Periodic => n,
        };
        let kernel = circulant_kernel(period, bin_width, &config);
        let at = |m: isize| kernel[m.rem_euclid(period as isize) as usize];
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (i, j) = (i as isize, j as isize);
                let mut v = at(i - j);
                if config.boundary == Boundary::Reflect {
                    v += at(i - (2 * n as isize - 1 - j));
                }
                matrix[i as usize * n + j as usize] = v;
            }
        }
        Ok(Derivative { n, matrix, config })
    }

    pub fn for_grid(grid: &EnergyGrid, config: DerivativeConfig) -> Result<Self> {
        Self::new(grid.n_bins(), uniform_width(grid)?, config)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `D row` into `out`.
    pub fn apply_into(&self, row: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let m = &self.matrix[i * self.n..(i + 1) * self.n];
            *o = m.iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }

    /// `Dᵀ row` into `out`.
    pub fn apply_transpose_into(&self, row: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &r) in row.iter().enumerate() {
            let m = &self.matrix[i * self.n..(i + 1) * self.n];
            for (o, a) in out.iter_mut().zip(m) {
                *o += a * r;
            }
        }
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_len(row.len())?;
        let mut out = vec![0.0; self.n];
        self.apply_into(row, &mut out);
        Ok(out)
    }

    pub fn apply_transpose(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_len(row.len())?;
        let mut out = vec![0.0; self.n];
        self.apply_transpose_into(row, &mut out);
        Ok(out)
    }

    /// Apply to consecutive rows of a flat array (length a multiple of n).
    pub fn apply_rows(&self, data: &[f64], transpose: bool) -> Result<Vec<f64>> {
        if !data.len().is_multiple_of(self.n) {
            return Err(Error::shape(format!(
                "data length {} is not a multiple of {} bins",
                data.len(),
                self.n
            )));
        }
        let mut out = vec![0.0; data.len()];
        par::for_each_chunk_mut(&mut out, self.n, |r, chunk| {
            let row = &data[r * self.n..(r + 1) * self.n];
            if transpose {
                self.apply_transpose_into(row, chunk);
            } else {
                self.apply_into(row, chunk);
            }
        });
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::shape(format!(
                "row has {len} bins, derivative built for {}",
                self.n
            )));
        }
        Ok(())
    }
}

/// First column of the circulant `F⁻¹ diag(iζ F_γ(ζ)) F` of length `period`.
fn circulant_kernel(period: usize, bin_width: f64, config: &DerivativeConfig) -> Vec<f64> {
    let np = period as f64;
    let freqs: Vec<(usize, f64)> = (1..period)
        .filter(|&k| 2 * k != period)
        .map(|k| {
            let signed = if 2 * k < period { k as f64 } else { k as f64 - np };
            let zeta = 2.0 * PI * signed / (np * bin_width);
            (k, zeta * config.gain(zeta))
        })
        .collect();
    (0..period)
        .map(|m| {
            let s: f64 = freqs
                .iter()
                .map(|&(k, h)| h * (2.0 * PI * (k * m % period) as f64 / np).sin())
                .sum();
            -s / np
        })
        .collect()
}

/// Smoothed derivative of one row on a uniform grid with spacing `bin_width`.
pub fn smoothed_derivative(row: &[f64], bin_width: f64, config: &DerivativeConfig) -> Result<Vec<f64>> {
    Derivative::new(row.len(), bin_width, *config)?.apply(row)
}

/// Differentiate every (source, detector) row of the scatter counts. The
/// ballistic channel is left untouched.
pub fn apply_to_spectrum(spectrum: &Spectrum, config: &DerivativeConfig) -> Result<Spectrum> {
    let d = Derivative::for_grid(&spectrum.grid, *config)?;
    let mut out = spectrum.clone();
    out.counts = d.apply_rows(&spectrum.counts, false)?;
    out.metadata
        .insert("derivative_gamma_mev".into(), config.gamma.to_string());
    Ok(out)
}

/// Linear map from images to flat data vectors.
pub trait LinearOperator: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;
    fn fingerprints(&self) -> &Fingerprints;
}

impl LinearOperator for SparseOperator {
    fn n_rows(&self) -> usize {
        SparseOperator::n_rows(self)
    }

    fn n_cols(&self) -> usize {
        SparseOperator::n_cols(self)
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        SparseOperator::apply(self, x)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        SparseOperator::apply_adjoint(self, y)
    }

    fn fingerprints(&self) -> &Fingerprints {
        &self.fingerprints
    }
}

/// `D ∘ A`, evaluated on the fly; the adjoint is `Aᵀ ∘ Dᵀ`.
pub struct Composed<'a> {
    pub op: &'a SparseOperator,
    pub derivative: Derivative,
}

impl<'a> Composed<'a> {
    pub fn new(op: &'a SparseOperator, grid: &EnergyGrid, config: &DerivativeConfig) -> Result<Self> {
        if !op.fingerprints.grid.is_empty() && op.fingerprints.grid != grid.fingerprint() {
            return Err(Error::Fingerprint {
                expected: op.fingerprints.grid.clone(),
                found: grid.fingerprint(),
            });
        }
        let derivative = Derivative::for_grid(grid, *config)?;
        if !op.n_rows().is_multiple_of(derivative.len()) {
            return Err(Error::shape("operator rows are not whole spectra"));
        }
        Ok(Composed { op, derivative })
    }
}

impl LinearOperator for Composed<'_> {
    fn n_rows(&self) -> usize {
        self.op.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.op.n_cols()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.derivative.apply_rows(&self.op.apply(x)?, false)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.op.n_rows() {
            return Err(Error::shape("data length does not match the operator"));
        }
        self.op.apply_adjoint(&self.derivative.apply_rows(y, true)?)
    }

    fn fingerprints(&self) -> &Fingerprints {
        &self.op.fingerprints
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(gamma: f64, boundary: Boundary) -> DerivativeConfig {
        DerivativeConfig {
            gamma,
            filter: Filter::Gaussian,
            boundary,
        }
    }

    #[test]
    fn constant_row_vanishes() {
        for b in [Boundary::Reflect, Boundary::Periodic] {
            let out = smoothed_derivative(&[3.0; 32], 0.01, &cfg(0.03, b)).unwrap();
            assert!(out.iter().all(|v| v.abs() < 1e-10 * 3.0), "{b:?}");
        }
    }

    #[test]
    fn sine_derivative_with_filter_gain() {
        let (n, de) = (64, 0.0125);
        let l = n as f64 * de;
        let c = cfg(0.02, Boundary::Periodic);
        for k in [1, 3, 5] {
            let w = 2.0 * PI * k as f64 / l;
            let row: Vec<f64> = (0..n).map(|m| (w * m as f64 * de).sin()).collect();
            let out = smoothed_derivative(&row, de, &c).unwrap();
            let gain = (-0.5 * (0.02 * w).powi(2)).exp();
            for (m, v) in out.iter().enumerate() {
                let expect = w * (w * m as f64 * de).cos() * gain;
                assert!((v - expect).abs() < 1e-6 * w, "k={k} m={m}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn large_gamma_suppresses() {
        let row: Vec<f64> = (0..32).map(|m| ((m * 7) % 5) as f64).collect();
        let out = smoothed_derivative(&row, 0.01, &cfg(10.0, Boundary::Reflect)).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn one_hot_has_zero_mean_periodic() {
        let mut row = vec![0.0; 48];
        row[20] = 1.0;
        let out = smoothed_derivative(&row, 0.01, &cfg(0.03, Boundary::Periodic)).unwrap();
        assert!(out.iter().sum::<f64>().abs() < 1e-10);
        // Energy-local: the response decays away from the spike.
        assert!(out[21].abs() + out[19].abs() > 100.0 * out[44].abs());
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for b in [Boundary::Reflect, Boundary::Periodic] {
            let d = Derivative::new(40, 0.02, cfg(0.05, b)).unwrap();
            let x: Vec<f64> = (0..40).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>() - 0.5).collect();
            let lhs: f64 = d.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(d.apply_transpose(&y).unwrap()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn short_rows_and_nonuniform_grids_rejected() {
        assert!(smoothed_derivative(&[1.0, 2.0, 3.0], 0.1, &cfg(0.1, Boundary::Reflect)).is_err());
        let grid = EnergyGrid::from_edges(vec![0.4, 0.5, 0.7, 0.8, 0.85, 0.9]).unwrap();
        assert!(DerivativeConfig::default_for(&grid).is_err());
    }

    #[test]
    fn linear_and_scale_commuting() {
        let d = Derivative::new(16, 0.05, cfg(0.1, Boundary::Reflect)).unwrap();
        let a: Vec<f64> = (0..16).map(|m| (m as f64).sqrt()).collect();
        let b: Vec<f64> = (0..16).map(|m| (m as f64 * 0.3).cos()).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + y).collect();
        let (da, db, ds) = (d.apply(&a).unwrap(), d.apply(&b).unwrap(), d.apply(&sum).unwrap());
        for k in 0..16 {
            assert!((ds[k] - (2.0 * da[k] + db[k])).abs() < 1e-12);
        }
    }
}
