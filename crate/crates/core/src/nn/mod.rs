//! Minimal neural-network toolkit: dense kernels, layers with hand-written
//! backward passes, and Adam.

pub mod adam;
pub mod layers;
pub mod linalg;
pub mod param;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv2d, ConvCache, Linear};
pub use param::{Module, Param};
