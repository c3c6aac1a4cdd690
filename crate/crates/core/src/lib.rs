//! Joint azimuth-range-velocity estimation for monostatic OFDM sensing.

pub mod crb;
pub mod error;
pub mod init1d;
pub mod music2d;
pub mod pipeline;
pub mod scenario;
pub mod signal;
pub mod smoothing;
pub mod subspace;

pub use error::{Error, Result};
