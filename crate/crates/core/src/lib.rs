pub mod audio;
pub mod degrade;
pub mod discriminators;
pub mod error;
pub mod features;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod training;

pub use audio::{ComplexSpectrogram, MelFilterbank, MelSpectrogram, StftConfig, Waveform};
pub use error::{Error, Result};
