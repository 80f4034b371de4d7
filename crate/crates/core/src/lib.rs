//! Live fuel moisture content estimation from multi-modal remote sensing.

pub mod config;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod mapper;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
