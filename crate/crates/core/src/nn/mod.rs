//! Parameters, convolution layers and the optimiser.

mod adam;
mod layers;
mod store;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv, Norm};
pub use store::{Bound, Init, ParamStore};
