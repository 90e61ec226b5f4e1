pub mod batch;
pub mod bernstein;
pub mod config;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod geometry;
pub mod jump_kernel;
pub mod quadrature;
pub mod sampler;
pub mod svg;
pub mod targets;
pub mod test_functions;

pub use error::{Error, Result};
