//! Metamorphosis geodesics: deformation combined with template variation.
//!
//! Each object type gets its own module with an initial-value solver and a
//! boundary-value matcher:
//!
//! - [`landmark`]: point sets, peakon collisions, shooting and path matching
//! - [`grid_meta`]: images and densities on periodic 2D grids
//! - [`oned`]: the 1D two-component systems and their Lax spectrum
//! - [`curve`]: closed plane curves in the tangent-angle representation
//! - [`measure`]: weighted point measures in the dual of an RKHS
//!
//! [`kernels`] and [`spectral`] hold the shared Hilbert-space machinery.

pub mod curve;
pub mod error;
pub mod grid_meta;
pub mod integrate;
pub mod io;
pub mod kernels;
pub mod landmark;
pub mod measure;
pub mod oned;
pub mod optim;
pub mod spectral;

pub use error::{Error, Result};
