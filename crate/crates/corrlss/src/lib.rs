//! Linear spectral statistics of sample correlation matrices built from
//! heavy-tailed data.

pub mod clt_target;
pub mod contour;
pub mod experiments;
pub mod error;
pub mod free_conv;
pub mod mp_law;
pub mod quadrature;
pub mod resampling;
pub mod rng;
pub mod spectra;
pub mod tail_sampler;
pub mod test_function;

pub use error::{Error, Result};
