use realfft::num_complex::Complex64;

use super::Waveform;
use crate::error::{Error, Result};
use crate::tensor::{Framing, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    /// Periodic Hamming.
    Hamming,
    Rectangular,
}

impl WindowKind {
    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Hann => "hann",
            WindowKind::Hamming => "hamming",
            WindowKind::Rectangular => "rectangular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hann" => Some(WindowKind::Hann),
            "hamming" => Some(WindowKind::Hamming),
            "rectangular" => Some(WindowKind::Rectangular),
            _ => None,
        }
    }

    fn sample(self, i: usize, n: usize) -> f64 {
        let c = (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
        match self {
            WindowKind::Hann => 0.5 - 0.5 * c,
            WindowKind::Hamming => 0.54 - 0.46 * c,
            WindowKind::Rectangular => 1.0,
        }
    }
}

/// Short-time Fourier transform geometry.
///
/// Signals are reflect-padded by `(n_fft - hop) / 2` on each side, so a
/// signal whose length is a multiple of `hop` yields exactly `len / hop`
/// frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            win_length: 1024,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize, win_length: usize, window: WindowKind) -> Result<Self> {
        let cfg = Self {
            n_fft,
            hop,
            win_length,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, h, w) = (self.n_fft, self.hop, self.win_length);
        if h == 0 || !(h <= w && w <= n) {
            return Err(Error::Config(format!(
                "stft needs 0 < hop <= win_length <= n_fft, got hop={h} win_length={w} n_fft={n}"
            )));
        }
        if (n - h) % 2 != 0 {
            return Err(Error::Config(format!(
                "n_fft - hop must be even for symmetric padding, got {n} - {h}"
            )));
        }
        if !self.satisfies_cola() {
            return Err(Error::Config(format!(
                "{} window of length {w} with hop {h} violates constant overlap-add",
                self.window.name()
            )));
        }
        Ok(())
    }

    /// Σ_t w(p - t·hop) is constant in p, to relative precision 1e-9.
    pub fn satisfies_cola(&self) -> bool {
        let w = self.window();
        let mut acc = vec![0.0; self.hop];
        for (i, v) in w.iter().enumerate() {
            acc[i % self.hop] += v;
        }
        let max = acc.iter().cloned().fold(f64::MIN, f64::max);
        let min = acc.iter().cloned().fold(f64::MAX, f64::min);
        min > 0.0 && (max - min) <= 1e-9 * max
    }

    /// The analysis window, zero-padded and centred to `n_fft` samples.
    pub fn window(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_fft];
        let off = (self.n_fft - self.win_length) / 2;
        for i in 0..self.win_length {
            out[off + i] = self.window.sample(i, self.win_length);
        }
        out
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn pad(&self) -> usize {
        (self.n_fft - self.hop) / 2
    }

    pub fn framing(&self) -> Framing {
        Framing {
            n_fft: self.n_fft,
            hop: self.hop,
        }
    }

    /// Frame count for a signal of `len` samples (`len >= n_fft`).
    pub fn frames(&self, len: usize) -> usize {
        (len + 2 * self.pad() - self.n_fft) / self.hop + 1
    }
}

/// Mirror-pads `x` by `pad` samples on each side (edge sample not repeated).
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    assert!(
        pad < x.len(),
        "reflect padding of {pad} needs more than {pad} samples"
    );
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i]));
    out
}

/// One-sided complex spectrogram, stored bin-major (`bins × frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    frames: usize,
    signal_len: usize,
    sample_rate: u32,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(config: StftConfig, frames: usize, sample_rate: u32) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); config.bins() * frames],
            frames,
            signal_len: frames * config.hop,
            sample_rate,
            config,
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Length of the analysed signal; [`istft`] reproduces it.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, v: Complex64) {
        self.data[bin * self.frames + frame] = v;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    /// Sum of squared magnitudes with the one-sided bins weighted to count
    /// their negative-frequency mirror.
    pub fn energy(&self) -> f64 {
        let bins = self.bins();
        let mut e = 0.0;
        for k in 0..bins {
            let w = if k == 0 || (k == bins - 1 && self.config.n_fft.is_multiple_of(2)) {
                1.0
            } else {
                2.0
            };
            for t in 0..self.frames {
                e += w * self.get(k, t).norm_sqr();
            }
        }
        e
    }
}

/// Analyses `w` with the padding rule of [`StftConfig`].
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if w.len() < cfg.n_fft {
        return Err(Error::Length(format!(
            "signal of {} samples is shorter than one window ({})",
            w.len(),
            cfg.n_fft
        )));
    }
    let padded = reflect_pad(w.samples(), cfg.pad());
    let n = padded.len();
    let planes = Var::constant(Tensor::new(&[1, n], padded)).stft(cfg.framing(), &cfg.window());
    let frames = planes.dim(3);
    let v = planes.value();
    let (re, im) = v.data().split_at(cfg.bins() * frames);
    Ok(ComplexSpectrogram {
        data: re
            .iter()
            .zip(im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect(),
        frames,
        signal_len: w.len(),
        sample_rate: w.sample_rate(),
        config: *cfg,
    })
}

/// Overlap-add inverse of [`stft`]; returns `s.signal_len()` samples.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = s.config;
    cfg.validate()?;
    let (bins, frames) = (cfg.bins(), s.frames);
    let mut planes = Vec::with_capacity(2 * bins * frames);
    planes.extend(s.data.iter().map(|c| c.re));
    planes.extend(s.data.iter().map(|c| c.im));
    let y = Var::constant(Tensor::new(&[2, 1, bins, frames], planes))
        .istft(cfg.framing(), &cfg.window());
    let pad = cfg.pad();
    let span = y.dim(1);
    let len = s.signal_len.min(span - pad);
    Waveform::new(y.value().data()[pad..pad + len].to_vec(), s.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16000,
        )
        .unwrap()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::default().validate().is_ok());
        assert!(StftConfig::new(1024, 512, 1024, WindowKind::Hann).is_ok());
        assert!(StftConfig::new(1024, 300, 1024, WindowKind::Hann).is_err());
        assert!(StftConfig::new(1024, 256, 2048, WindowKind::Hann).is_err());
        assert!(StftConfig::new(64, 64, 64, WindowKind::Rectangular).is_ok());
        assert!(StftConfig::new(64, 16, 48, WindowKind::Hann).is_ok());
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        assert_eq!(
            reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2),
            vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]
        );
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let s = stft(&Waveform::zeros(4096, 16000), &StftConfig::default()).unwrap();
        assert_eq!((s.bins(), s.frames()), (513, 16));
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn too_short_is_length_error() {
        assert!(matches!(
            stft(&Waveform::zeros(1000, 16000), &StftConfig::default()),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn stft_is_linear() {
        let w = noise(4096, 1);
        let cfg = StftConfig::default();
        let a = stft(&w, &cfg).unwrap();
        let b = stft(&w.scaled(2.0), &cfg).unwrap();
        let dev = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x * 2.0 - y).norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6);
    }

    #[test]
    fn reconstructs_random_signals() {
        let cfg = StftConfig::default();
        for (len, seed) in [(8192, 2), (4096, 3), (5000, 4)] {
            let w = noise(len, seed);
            let y = istft(&stft(&w, &cfg).unwrap()).unwrap();
            assert_eq!(y.len(), len);
            assert!(rel_l2(y.samples(), w.samples()) < 1e-10);
        }
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let s = ComplexSpectrogram::zeros(StftConfig::default(), 16, 16000);
        let y = istft(&s).unwrap();
        assert_eq!(y.len(), 4096);
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let w = Waveform::tone(1000.0, 1.0, 0.0, 8192, 16000);
        let cfg = StftConfig::default();
        let s = stft(&w, &cfg).unwrap();
        // Edge frames straddle the mirrored padding, which bends the tone.
        let first = cfg.pad().div_ceil(cfg.hop);
        let last = (w.len() + cfg.pad() - cfg.n_fft) / cfg.hop;
        for t in first..=last {
            let best = (0..s.bins())
                .max_by(|&a, &b| s.get(a, t).norm().total_cmp(&s.get(b, t).norm()))
                .unwrap();
            assert_eq!(best, 64);
        }
    }

    #[test]
    fn doubled_magnitudes_double_the_tone() {
        let w = Waveform::tone(1000.0, 0.5, 0.3, 8192, 16000);
        let mut s = stft(&w, &StftConfig::default()).unwrap();
        for c in s.data_mut() {
            *c = Complex64::from_polar(2.0 * c.norm(), c.arg());
        }
        let y = istft(&s).unwrap();
        assert!(rel_l2(y.samples(), w.scaled(2.0).samples()) < 1e-4);
    }

    #[test]
    fn parseval_with_window_compensation() {
        // Hann at 75 % overlap: Σ w² = 1.5 per sample, Σ_k |X|² = n_fft · Σ |x w|².
        let cfg = StftConfig::default();
        let w = noise(16384, 5);
        let s = stft(&w, &cfg).unwrap();
        let est = s.energy() / (cfg.n_fft as f64 * 1.5);
        assert!(
            (est / w.energy() - 1.0).abs() < 0.01,
            "{est} vs {}",
            w.energy()
        );
    }
}
