use super::{stft, StftConfig, Waveform};
use crate::error::{Error, Result};

/// Clamp applied before the logarithm of mel amplitudes.
pub const MEL_FLOOR: f64 = 1e-5;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(f: f64) -> f64 {
    if f < MIN_LOG_HZ {
        f / F_SP
    } else {
        MIN_LOG_MEL + (f / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    if m < MIN_LOG_MEL {
        m * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (m - MIN_LOG_MEL)).exp()
    }
}

/// Area-normalised triangular filters on the Slaney mel scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
    /// `n_mels × (n_fft/2 + 1)`, row-major.
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(
        sample_rate: u32,
        n_fft: usize,
        n_mels: usize,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || n_fft < 2 {
            return Err(Error::Parameter(format!(
                "mel filterbank needs n_mels > 0 and n_fft >= 2, got {n_mels}, {n_fft}"
            )));
        }
        if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
            return Err(Error::Parameter(format!(
                "mel band [{f_min}, {f_max}] Hz must satisfy 0 <= f_min < f_max <= {nyquist}"
            )));
        }
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (r - l);
            let row = &mut weights[m * bins..(m + 1) * bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let rise = (f - l) / (c - l);
                let fall = (r - f) / (r - c);
                *w = rise.min(fall).max(0.0) * norm;
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Parameter(format!(
                    "mel band {m} ({l:.1}-{r:.1} Hz) falls between FFT bins; use fewer mels or a larger n_fft"
                )));
            }
        }
        Ok(Self {
            n_mels,
            n_fft,
            sample_rate,
            f_min,
            f_max,
            weights,
        })
    }

    /// 80 bands over `[0, sample_rate/2]`.
    pub fn default_for(sample_rate: u32, n_fft: usize) -> Result<Self> {
        Self::new(sample_rate, n_fft, 80, 0.0, sample_rate as f64 / 2.0)
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let b = self.bins();
        &self.weights[m * b..(m + 1) * b]
    }
}

/// Log-amplitude mel spectrogram, `n_mels × frames`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    n_mels: usize,
    frames: usize,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f64>, n_mels: usize, frames: usize) -> Result<Self> {
        if values.len() != n_mels * frames {
            return Err(Error::Shape(format!(
                "{} values cannot form a {n_mels}x{frames} mel spectrogram",
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_mels,
            frames,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.frames + frame]
    }
}

/// `log(max(fb · |stft(w)|, MEL_FLOOR))`.
pub fn mel_spectrogram(
    w: &Waveform,
    fb: &MelFilterbank,
    cfg: &StftConfig,
) -> Result<MelSpectrogram> {
    if fb.n_fft != cfg.n_fft || fb.sample_rate != w.sample_rate() {
        return Err(Error::Shape(format!(
            "filterbank built for n_fft={} at {} Hz, used with n_fft={} at {} Hz",
            fb.n_fft,
            fb.sample_rate,
            cfg.n_fft,
            w.sample_rate()
        )));
    }
    let s = stft(w, cfg)?;
    let (bins, frames) = (s.bins(), s.frames());
    let mag = s.magnitudes();
    let mut values = vec![0.0; fb.n_mels * frames];
    for m in 0..fb.n_mels {
        let row = fb.row(m);
        for t in 0..frames {
            let mut acc = 0.0;
            for k in 0..bins {
                acc += row[k] * mag[k * frames + t];
            }
            values[m * frames + t] = acc.max(MEL_FLOOR).ln();
        }
    }
    MelSpectrogram::new(values, fb.n_mels, frames)
}
