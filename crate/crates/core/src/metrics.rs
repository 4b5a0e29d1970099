//! Image quality metrics against a ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DensityImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// `‖x − t‖₂ / ‖t‖₂`.
    pub relative_rmse: f64,
    /// Root mean square error per pixel.
    pub rmse: f64,
    /// `20 log10(max t / rmse)` in dB; infinite for a perfect match.
    pub psnr_db: f64,
}

pub fn compare(recon: &DensityImage, truth: &DensityImage) -> Result<ImageMetrics> {
    if recon.n != truth.n {
        return Err(Error::shape(format!(
            "{}x{} image vs {}x{} truth",
            recon.n, recon.n, truth.n, truth.n
        )));
    }
    Ok(compare_values(&recon.values, &truth.values))
}

pub fn compare_values(recon: &[f64], truth: &[f64]) -> ImageMetrics {
    let sq: f64 = recon.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = truth.iter().map(|v| v * v).sum();
    let rmse = (sq / truth.len().max(1) as f64).sqrt();
    let peak = truth.iter().copied().fold(0.0, f64::max);
    ImageMetrics {
        relative_rmse: if norm > 0.0 { (sq / norm).sqrt() } else { sq.sqrt() },
        rmse,
        psnr_db: 20.0 * (peak / rmse).log10(),
    }
}

pub fn relative_rmse(recon: &[f64], truth: &[f64]) -> f64 {
    compare_values(recon, truth).relative_rmse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let t = DensityImage::from_values(2, 1.0, vec![1.0, 0.0, 0.5, 0.2]).unwrap();
        let m = compare(&t, &t).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.relative_rmse, 0.0);
        assert!(m.psnr_db.is_infinite());
    }

    #[test]
    fn known_values() {
        let m = compare_values(&[1.0, 1.0, 0.0, 0.0], &[2.0, 0.0, 0.0, 0.0]);
        assert!((m.rmse - (0.5f64).sqrt()).abs() < 1e-15);
        assert!((m.relative_rmse - (0.5f64).sqrt()).abs() < 1e-15);
        assert!((m.psnr_db - 20.0 * (2.0 / 0.5f64.sqrt()).log10()).abs() < 1e-12);
    }
}
