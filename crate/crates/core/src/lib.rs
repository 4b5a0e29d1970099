//! Joint sparse-view CT and Compton scattering tomography.
//!
//! The crate synthesizes energy-resolved scatter spectra from 2D electron
//! density maps (ballistic, first- and second-order scattering), assembles
//! the first-order operator linearized around a CT prior as a sparse matrix,
//! and reconstructs the density by TV-regularized nonlinear conjugate
//! gradients, optionally after differentiating every spectrum along the
//! energy axis.
//!
//! Heavy loops (per source/detector pair, per pixel column) run on rayon when
//! the default `parallel` feature is enabled and fall back to plain iterators
//! otherwise.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod par;
pub mod phantom;
pub mod physics;
pub mod pipeline;
pub mod solver;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use geometry::{Point, ScanGeometry};
pub use image::DensityImage;
