//! Waveform container and the deterministic DSP shared by every stage.

mod mel;
mod resample;
mod stft;
mod wav;
mod waveform;

pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MelSpectrogram, MEL_FLOOR};
pub use resample::{resample, resampled_len};
pub use stft::{istft, reflect_pad, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use wav::{read_wav, write_wav, WavEncoding};
pub use waveform::Waveform;
