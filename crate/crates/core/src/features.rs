//! Differentiable log-mel front end shared by the generator input and the
//! mel loss.

use crate::audio::{MelFilterbank, StftConfig, MEL_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{Float, PadMode, Tensor, Var};

/// Added under the square root of `re² + im²` so gradients stay finite
/// at zero amplitude.
pub const MAGNITUDE_EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LogMel {
    cfg: StftConfig,
    window: Vec<f64>,
    weights: Vec<f64>,
    n_mels: usize,
    sample_rate: u32,
}

impl LogMel {
    pub fn new(fb: &MelFilterbank, cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        if fb.n_fft() != cfg.n_fft {
            return Err(Error::Shape(format!(
                "filterbank n_fft {} differs from stft n_fft {}",
                fb.n_fft(),
                cfg.n_fft
            )));
        }
        Ok(Self {
            cfg,
            window: cfg.window(),
            weights: fb.weights().to_vec(),
            n_mels: fb.n_mels(),
            sample_rate: fb.sample_rate(),
        })
    }

    /// 80-band default filterbank at `sample_rate`.
    pub fn standard(sample_rate: u32, n_mels: usize, cfg: StftConfig) -> Result<Self> {
        let fb = MelFilterbank::new(
            sample_rate,
            cfg.n_fft,
            n_mels,
            0.0,
            sample_rate as f64 / 2.0,
        )?;
        Self::new(&fb, cfg)
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.cfg
    }

    /// `x [B, L] -> [B, n_mels, frames]`, natural-log amplitudes clamped
    /// below at [`MEL_FLOOR`].
    pub fn forward<T: Float>(&self, x: &Var<T>) -> Var<T> {
        let pad = self.cfg.pad();
        let spec = x
            .pad(1, pad, pad, PadMode::Reflect)
            .stft(self.cfg.framing(), &self.window);
        let mag = spec.magnitude(MAGNITUDE_EPS);
        let fb = Var::constant(Tensor::from_f64(
            &[self.n_mels, self.cfg.bins()],
            &self.weights,
        ));
        fb.matmul(&mag).clamp_min(MEL_FLOOR).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{mel_spectrogram, Waveform};

    #[test]
    fn matches_the_reference_mel_away_from_the_floor() {
        let w = Waveform::tone(700.0, 0.5, 0.2, 8192, 16000);
        let fb = MelFilterbank::default_for(16000, 1024).unwrap();
        let cfg = StftConfig::default();
        let reference = mel_spectrogram(&w, &fb, &cfg).unwrap();
        let lm = LogMel::new(&fb, cfg).unwrap();
        let x: Var<f64> = Var::constant(Tensor::from_f64(&[1, 8192], w.samples()));
        let y = lm.forward(&x);
        assert_eq!(y.shape(), &[1, 80, 32]);
        for (a, b) in y.value().data().iter().zip(reference.values()) {
            // The eps under the root only matters close to the clamp.
            assert!((a - b).abs() < 1e-3 || *b < -9.0, "{a} vs {b}");
        }
    }
}
