//! Wide-band butterfly networks for 2D inverse wave scattering.

pub mod error;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod model;
pub mod spectral;
pub mod tensornet;
pub mod training;
pub mod wavesim;

pub use error::{Error, Result};
