//! Mel-conditioned waveform generator: spectral UNet on the input mel,
//! HiFi-style upsampler, waveform UNet fused with the input signal, and a
//! phase-preserving spectral mask.

mod masknet;
mod unet;
mod upsampler;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use masknet::{unit_softplus_bias, MaskNet, MaskNetTrace, MaskSource};
pub use unet::UNet2d;
pub use upsampler::{Upsampler, UpsamplerConfig};

use crate::audio::{StftConfig, Waveform, MEL_FLOOR};
use crate::error::{Error, Result};
use crate::features::LogMel;
use crate::nn::{Bound, Conv, Init, ParamStore};
use crate::tensor::{Float, PadMode, Tensor, Var};

/// How the masked channels become one waveform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    Sum,
    /// 1×1 conv over channels, initialised to the plain sum.
    Learned,
}

impl Merge {
    pub fn name(self) -> &'static str {
        match self {
            Merge::Sum => "sum",
            Merge::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(Merge::Sum),
            "learned" => Some(Merge::Learned),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n_mels: usize,
    /// Mel STFT size; the mel hop is `hop`.
    pub n_fft: usize,
    pub hop: usize,
    pub mel_f_min: f64,
    /// Upper mel edge; `None` means the Nyquist rate.
    pub mel_f_max: Option<f64>,
    pub use_spectral_unet: bool,
    pub spectral_unet_widths: [usize; 4],
    pub spectral_unet_depth: usize,
    pub upsampler: UpsamplerConfig,
    pub use_wave_unet: bool,
    pub wave_unet_widths: [usize; 4],
    pub wave_unet_depth: usize,
    pub wave_unet_out_channels: usize,
    pub use_masknet: bool,
    pub masknet_widths: [usize; 4],
    pub masknet_depth: usize,
    pub masknet_stft: StftConfig,
    pub merge: Merge,
    pub init_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            n_fft: 1024,
            hop: 256,
            mel_f_min: 0.0,
            mel_f_max: None,
            use_spectral_unet: true,
            spectral_unet_widths: [8, 16, 32, 64],
            spectral_unet_depth: 4,
            upsampler: UpsamplerConfig::default(),
            use_wave_unet: true,
            wave_unet_widths: [10, 20, 40, 80],
            wave_unet_depth: 4,
            wave_unet_out_channels: 4,
            use_masknet: true,
            masknet_widths: [8, 12, 24, 32],
            masknet_depth: 4,
            masknet_stft: StftConfig::default(),
            merge: Merge::Sum,
            init_std: 0.01,
        }
    }
}

/// Module-removal variants, each re-balanced to the baseline size except
/// [`Ablation::VanillaHifi`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    NoSpectralUnet,
    NoWaveUnet,
    NoMaskNet,
    /// Upsampler only, 256 initial channels, single output channel.
    VanillaHifi,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoSpectralUnet,
        Ablation::NoWaveUnet,
        Ablation::NoMaskNet,
        Ablation::VanillaHifi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoSpectralUnet => "no_spectralunet",
            Ablation::NoWaveUnet => "no_waveunet",
            Ablation::NoMaskNet => "no_masknet",
            Ablation::VanillaHifi => "vanilla_hifi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Whether the variant is sized to match the baseline.
    pub fn size_matched(self) -> bool {
        self != Ablation::VanillaHifi
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_mels == 0 || self.hop == 0 {
            return bad("n_mels and hop must be positive".into());
        }
        StftConfig::new(
            self.n_fft,
            self.hop,
            self.n_fft,
            crate::audio::WindowKind::Hann,
        )?;
        self.upsampler.validate(self.hop)?;
        let widths = [
            ("spectral_unet_widths", self.spectral_unet_widths),
            ("wave_unet_widths", self.wave_unet_widths),
            ("masknet_widths", self.masknet_widths),
        ];
        for (name, w) in widths {
            if w[0] == 0 || w.windows(2).any(|p| p[0] >= p[1]) {
                return bad(format!(
                    "{name} must be positive and strictly increasing, got {w:?}"
                ));
            }
        }
        if self.wave_unet_out_channels == 0 {
            return bad("wave_unet_out_channels must be ≥ 1".into());
        }
        if self.spectral_unet_depth == 0 || self.wave_unet_depth == 0 || self.masknet_depth == 0 {
            return bad("block depths must be ≥ 1".into());
        }
        self.masknet_stft.validate()?;
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        if !self.use_wave_unet
            && self.use_masknet
            && self.upsampler.out_channels != self.wave_unet_out_channels
        {
            return bad(format!(
                "without the waveform UNet the upsampler must emit wave_unet_out_channels ({}) channels, got {}",
                self.wave_unet_out_channels, self.upsampler.out_channels
            ));
        }
        Ok(())
    }

    /// Every UNet width halved and the upsampler at half its channels.
    pub fn tiny() -> Self {
        let half = |w: [usize; 4]| w.map(|v| v.div_ceil(2));
        let d = Self::default();
        Self {
            spectral_unet_widths: half(d.spectral_unet_widths),
            wave_unet_widths: half(d.wave_unet_widths),
            masknet_widths: half(d.masknet_widths),
            upsampler: UpsamplerConfig {
                initial_channels: d.upsampler.initial_channels / 2,
                ..d.upsampler.clone()
            },
            ..d
        }
    }

    /// `self` with one module removed. Size-matched variants grow the
    /// upsampler's initial channels to land as close as possible to the
    /// parameter count of `self`.
    pub fn ablate(&self, which: Ablation) -> Result<Self> {
        let mut cfg = self.clone();
        match which {
            Ablation::NoSpectralUnet => cfg.use_spectral_unet = false,
            Ablation::NoWaveUnet => {
                cfg.use_wave_unet = false;
                cfg.upsampler.out_channels = cfg.wave_unet_out_channels;
            }
            Ablation::NoMaskNet => {
                cfg.use_masknet = false;
                cfg.wave_unet_out_channels = 1;
            }
            Ablation::VanillaHifi => {
                cfg.use_spectral_unet = false;
                cfg.use_wave_unet = false;
                cfg.use_masknet = false;
                cfg.upsampler.initial_channels = 256;
                cfg.upsampler.out_channels = 1;
                cfg.validate()?;
                return Ok(cfg);
            }
        }
        let target = count_params(self)?;
        let min = 1usize << cfg.upsampler.upsample_rates.len();
        let mut best = (usize::MAX, cfg.upsampler.initial_channels);
        for c in min..=4 * self.upsampler.initial_channels.max(min) {
            cfg.upsampler.initial_channels = c;
            let diff = count_params(&cfg)?.abs_diff(target);
            if diff < best.0 {
                best = (diff, c);
            }
        }
        cfg.upsampler.initial_channels = best.1;
        Ok(cfg)
    }
}

/// Trainable parameter count of a configuration.
pub fn count_params(cfg: &GeneratorConfig) -> Result<usize> {
    // The count does not depend on the rate; pick one the mel range fits.
    let rate = cfg
        .mel_f_max
        .map_or(16000, |f| (2.0 * f).ceil() as u32)
        .max(16000);
    Ok(Generator::new(cfg, rate)?.num_params())
}

/// Generator outputs with the mask stage exposed.
pub struct GeneratorOutput<T: Float> {
    /// `[B, L]`.
    pub audio: Var<T>,
    pub masknet: Option<MaskNetTrace<T>>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    mel: LogMel,
    spectral_unet: Option<UNet2d>,
    upsampler: Upsampler,
    wave_unet: Option<UNet2d>,
    masknet: Option<MaskNet>,
    merge: Option<Conv>,
}

impl Generator {
    pub fn new(config: &GeneratorConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mel_cfg = StftConfig::new(c.n_fft, c.hop, c.n_fft, crate::audio::WindowKind::Hann)?;
        let f_max = c.mel_f_max.unwrap_or(sample_rate as f64 / 2.0);
        let fb =
            crate::audio::MelFilterbank::new(sample_rate, c.n_fft, c.n_mels, c.mel_f_min, f_max)?;
        let mel = LogMel::new(&fb, mel_cfg)?;
        let m = c.wave_unet_out_channels;
        let spectral_unet = c.use_spectral_unet.then(|| {
            UNet2d::new(
                "spectral_unet",
                1,
                1,
                c.spectral_unet_widths,
                c.spectral_unet_depth,
                [3, 3],
                [2, 2],
            )
        });
        let upsampler = Upsampler::new("upsampler", c.n_mels, c.upsampler.clone());
        let wave_unet = c.use_wave_unet.then(|| {
            UNet2d::new(
                "wave_unet",
                c.upsampler.out_channels + 1,
                m,
                c.wave_unet_widths,
                c.wave_unet_depth,
                [1, 5],
                [1, 4],
            )
        });
        let masknet = c
            .use_masknet
            .then(|| MaskNet::new("masknet", c.masknet_widths, c.masknet_depth, c.masknet_stft));
        let streams = if c.use_wave_unet {
            m
        } else {
            c.upsampler.out_channels
        };
        let merge =
            (c.merge == Merge::Learned && streams > 1).then(|| Conv::new1d("merge", streams, 1, 1));
        Ok(Self {
            config: c.clone(),
            mel,
            spectral_unet,
            upsampler,
            wave_unet,
            masknet,
            merge,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.mel.sample_rate()
    }

    pub fn log_mel(&self) -> &LogMel {
        &self.mel
    }

    pub fn masknet(&self) -> Option<&MaskNet> {
        self.masknet.as_ref()
    }

    pub fn spectral_unet(&self) -> Option<&UNet2d> {
        self.spectral_unet.as_ref()
    }

    pub fn upsampler(&self) -> &Upsampler {
        &self.upsampler
    }

    pub fn wave_unet(&self) -> Option<&UNet2d> {
        self.wave_unet.as_ref()
    }

    /// Trainable scalars per module, keyed by module name.
    pub fn param_breakdown(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        if let Some(u) = &self.spectral_unet {
            out.push(("spectral_unet", u.num_params()));
        }
        out.push(("upsampler", self.upsampler.num_params()));
        if let Some(u) = &self.wave_unet {
            out.push(("wave_unet", u.num_params()));
        }
        if let Some(m) = &self.masknet {
            out.push(("masknet", m.num_params()));
        }
        if let Some(c) = &self.merge {
            out.push(("merge", c.num_params()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_breakdown().iter().map(|e| e.1).sum()
    }

    /// Freshly initialised parameters, deterministic in `seed`.
    pub fn init_params<T: Float>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = self.config.init_std;
        let mut store = ParamStore::new();
        if let Some(u) = &self.spectral_unet {
            u.register(&mut store, std, &mut rng);
        }
        self.upsampler.register(&mut store, std, &mut rng);
        if let Some(u) = &self.wave_unet {
            u.register(&mut store, std, &mut rng);
        }
        if let Some(m) = &self.masknet {
            m.register(&mut store, std, &mut rng);
        }
        if let Some(c) = &self.merge {
            c.register(&mut store, Init::Const(1.0), Init::Const(0.0), &mut rng);
        }
        store
    }

    /// Length multiple the forward pass requires.
    pub fn granularity(&self) -> usize {
        let mut g = self.config.hop;
        if let Some(u) = &self.wave_unet {
            g = lcm(g, u.granularity()[1]);
        }
        if let Some(m) = &self.masknet {
            g = lcm(g, m.stft.hop);
        }
        g
    }

    /// Shortest valid input: a granularity multiple longer than every
    /// reflect pad.
    pub fn min_length(&self) -> usize {
        let mut pad = self.mel.stft_config().pad();
        if let Some(m) = &self.masknet {
            pad = pad.max(m.stft.pad());
        }
        (pad + 1).next_multiple_of(self.granularity())
    }

    /// Smallest valid length `≥ len`.
    pub fn padded_length(&self, len: usize) -> usize {
        len.next_multiple_of(self.granularity())
            .max(self.min_length())
    }

    /// `[B, n_mels, frames]` corrected log-mel.
    fn spectral_stage<T: Float>(&self, p: &Bound<T>, mel: Var<T>) -> Var<T> {
        let Some(unet) = &self.spectral_unet else {
            return mel;
        };
        let (b, h, w) = (mel.dim(0), mel.dim(1), mel.dim(2));
        let [gh, gw] = unet.granularity();
        let floor = MEL_FLOOR.ln();
        let x = mel
            .reshape(&[b, 1, h, w])
            .pad(2, 0, h.next_multiple_of(gh) - h, PadMode::Constant(floor))
            .pad(3, 0, w.next_multiple_of(gw) - w, PadMode::Constant(floor));
        let y = unet
            .forward(p, &x)
            .narrow(2, 0, h)
            .narrow(3, 0, w)
            .reshape(&[b, h, w]);
        y.add(&mel)
    }

    /// `x [B, L] -> [B, L]` for valid `L` (see [`Self::padded_length`]).
    pub fn forward_with<T: Float>(
        &self,
        p: &Bound<T>,
        x: &Var<T>,
        mask: &MaskSource,
    ) -> GeneratorOutput<T> {
        let (b, len) = (x.dim(0), x.dim(1));
        assert!(
            len % self.granularity() == 0 && len >= self.min_length(),
            "generator input length {len} invalid; pad to padded_length"
        );
        let mel = self.spectral_stage(p, self.mel.forward(x));
        let mut h = self.upsampler.forward(p, &mel);
        if let Some(u) = &self.wave_unet {
            let xc = x.reshape(&[b, 1, len]);
            let c = h.dim(1);
            let inp = Var::concat(&[&h, &xc], 1).reshape(&[b, c + 1, 1, len]);
            let m = u.out_channels;
            // Each output channel starts from x/m so the plain sum starts at x.
            h = u
                .forward(p, &inp)
                .reshape(&[b, m, len])
                .add(&xc.mul_scalar(1.0 / m as f64));
        }
        let mut trace = None;
        if let Some(net) = &self.masknet {
            let t = net.forward(p, &h, mask);
            h = t.channels.clone();
            trace = Some(t);
        }
        let audio = match &self.merge {
            Some(c) => c.forward1d(p, &h),
            None => h.sum_axes_keep(&[1]),
        };
        GeneratorOutput {
            audio: audio.reshape(&[b, len]),
            masknet: trace,
        }
    }

    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        self.forward_with(p, x, &MaskSource::Network).audio
    }

    /// Runs one waveform of any length: zero-pads to a valid length and
    /// crops the output back.
    pub fn infer<T: Float>(&self, params: &ParamStore<T>, x: &Waveform) -> Result<Waveform> {
        if x.sample_rate() != self.sample_rate() {
            return Err(Error::Parameter(format!(
                "input is {} Hz, generator runs at {} Hz",
                x.sample_rate(),
                self.sample_rate()
            )));
        }
        if x.is_empty() {
            return Ok(x.clone());
        }
        let len = x.len();
        let mut data = x.samples().to_vec();
        data.resize(self.padded_length(len), 0.0);
        let input = Var::constant(Tensor::from_f64(&[1, data.len()], &data));
        let y = self.forward(&params.bind(None), &input);
        let mut out = y.value().to_f64();
        out.truncate(len);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(
                "generator produced non-finite samples".into(),
            ));
        }
        Waveform::new(out, x.sample_rate())
    }

    /// [`Self::infer`] over `window`-sample chunks overlapping by `overlap`,
    /// joined with linear crossfades.
    pub fn infer_chunked<T: Float>(
        &self,
        params: &ParamStore<T>,
        x: &Waveform,
        window: usize,
        overlap: usize,
    ) -> Result<Waveform> {
        if overlap >= window {
            return Err(Error::Parameter(format!(
                "overlap {overlap} must be below window {window}"
            )));
        }
        if x.len() <= window {
            return self.infer(params, x);
        }
        let step = window - overlap;
        let mut out = vec![0.0; x.len()];
        let mut start = 0;
        loop {
            let len = window.min(x.len() - start);
            let y = self.infer(params, &x.segment(start, len))?;
            let fade_in = if start == 0 { 0 } else { overlap };
            for (i, v) in y.samples().iter().enumerate() {
                let w = if i < fade_in {
                    (i as f64 + 0.5) / fade_in as f64
                } else {
                    1.0
                };
                out[start + i] = out[start + i] * (1.0 - w) + v * w;
            }
            if start + len >= x.len() {
                break;
            }
            start += step;
        }
        Waveform::new(out, x.sample_rate())
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}
