//! Frequency-domain Helmholtz forward modelling and dataset synthesis.

mod acquisition;
mod dataset;
mod greens;
mod helmholtz;
mod scatterers;

pub use acquisition::{interpolate, sample_receivers, AcquisitionGeometry, AcquisitionMode};
pub use dataset::{
    assign_bands, complex_to_channels, draw_scatterers, generate_sample, sample_rng, simulate,
    Band, BandMap, BandedData, ScatterSample, ScattererDictionary, SimConfig,
};
pub use greens::{analytic_greens, bessel_j0, bessel_y0, hankel1_0};
pub use helmholtz::{
    build_helmholtz_system, cell_centres, planewave_source, point_source, solve_pointsource,
    solve_scattered_planewave, solve_scattered_pointsource, FactorizedSystem, FdOrder, Field,
    HelmholtzSystem, Medium, PmlSpec, SolverGrid,
};
pub use scatterers::{rasterize_into, rasterize_scatterer, Raster, Scatterer, ShapeKind};
