//! Height-aware projection of lidar point clouds to 2-D rasters for
//! predicting permafrost thaw, with baselines, metrics, a synthetic scene
//! generator, and a training loop.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod rng;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
