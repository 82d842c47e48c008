//! Spatial-interpolation frost prediction.
//!
//! Per-station neural submodels predict the next-hour minimum temperature at
//! a target site from another station's live climate readings plus both
//! sites' location, elevation (DEM) and vegetation index (NDVI). A fold's
//! submodels are combined by averaging, distance-weighted averaging or
//! weighted frost voting, and compared against inverse distance weighting,
//! ordinary kriging and on-site baseline networks.

pub mod domain;
pub mod ensemble;
pub mod evaluate;
pub mod error;
pub mod features;
pub mod geostats;
pub mod ingest;
pub mod neuralnet;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
