use std::path::Path;
use std::str::FromStr;

use crate::audio::{StftConfig, WindowKind};
use crate::degrade::{FilterFamily, Task};
use crate::discriminators::{DiscriminatorConfig, DiscriminatorKind, Schedule};
use crate::error::{Error, Result};
use crate::generator::{Ablation, GeneratorConfig, Merge};
use crate::losses::LossWeights;

/// How the BWE corpus is split into training and held-out parts.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    /// Explicit held-out speakers; when empty the last
    /// `holdout_speaker_count` speakers (lexicographic) are held out.
    pub holdout_speakers: Vec<String>,
    pub holdout_speaker_count: usize,
    /// Utterance keys per held-out speaker reserved for evaluation; those
    /// keys are removed from every training speaker too.
    pub holdout_utterances: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            holdout_speakers: Vec::new(),
            holdout_speaker_count: 6,
            holdout_utterances: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub sample_rate: u32,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub weights: LossWeights,
    pub segment_length: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Learning-rate factor applied once per epoch.
    pub lr_decay: f64,
    pub adam_betas: (f64, f64),
    /// Steps per epoch; `0` derives it from the corpus size.
    pub epoch_steps: u64,
    pub checkpoint_every: u64,
    pub validate_every: u64,
    pub validation_clips: usize,
    pub log_every: u64,
    /// BWE band-limited rate `s`.
    pub source_rate: u32,
    pub filter_families: Vec<FilterFamily>,
    pub filter_orders: (usize, usize),
    pub max_align_lag: usize,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Bwe,
            sample_rate: 16000,
            seed: 0,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            weights: LossWeights::default(),
            segment_length: 8192,
            batch_size: 16,
            total_steps: 100_000,
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_decay: 0.999,
            adam_betas: (0.8, 0.99),
            epoch_steps: 0,
            checkpoint_every: 1000,
            validate_every: 1000,
            validation_clips: 16,
            log_every: 1,
            source_rate: 2000,
            filter_families: FilterFamily::ALL.to_vec(),
            filter_orders: (2, 10),
            max_align_lag: 1024,
            split: SplitSpec::default(),
        }
    }
}

pub const PRESETS: [&str; 11] = [
    "bwe",
    "se",
    "tiny",
    "ablation.no_spectralunet",
    "ablation.no_waveunet",
    "ablation.no_masknet",
    "ablation.vanilla_hifi",
    "ablation.orig_msd",
    "ablation.tuned_msd",
    "ablation.msd_mpd",
    "ablation.ssd5",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected a boolean, got `{v}`"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_widths(key: &str, v: &str) -> Result<[usize; 4]> {
    let l: Vec<usize> = parse_list(key, v)?;
    l.try_into()
        .map_err(|_| Error::Config(format!("`{key}`: expected 4 widths, got `{v}`")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn named<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    f(v.trim()).ok_or_else(|| Error::Config(format!("`{key}`: unknown value `{v}`")))
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_preset(name)?;
        Ok(c)
    }

    /// Applies a comma-separated list of presets in order.
    pub fn apply_preset(&mut self, names: &str) -> Result<()> {
        for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            self.apply_one(name)?;
        }
        Ok(())
    }

    fn apply_one(&mut self, name: &str) -> Result<()> {
        match name {
            "bwe" => {
                self.task = Task::Bwe;
                self.sample_rate = 16000;
            }
            "se" => {
                self.task = Task::Se;
                self.sample_rate = 16000;
            }
            "tiny" => {
                let t = GeneratorConfig::tiny();
                let g = &mut self.generator;
                g.spectral_unet_widths = t.spectral_unet_widths;
                g.wave_unet_widths = t.wave_unet_widths;
                g.masknet_widths = t.masknet_widths;
                g.upsampler.initial_channels = t.upsampler.initial_channels;
            }
            "ablation.orig_msd" => self.discriminator = DiscriminatorConfig::msd(),
            "ablation.tuned_msd" => {
                self.discriminator = DiscriminatorConfig {
                    spectral_norm: false,
                    ..DiscriminatorConfig::msd()
                };
                self.weights.lambda_mel = 15.0;
                self.lr_d = 1e-5;
            }
            "ablation.msd_mpd" => self.discriminator = DiscriminatorConfig::msd_mpd(),
            "ablation.ssd5" => self.discriminator = DiscriminatorConfig::ssd(5),
            other => {
                let a = other
                    .strip_prefix("ablation.")
                    .and_then(Ablation::parse)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown preset `{other}`; known: {}",
                            PRESETS.join(", ")
                        ))
                    })?;
                self.generator = self.generator.ablate(a)?;
            }
        }
        Ok(())
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let g = &mut self.generator;
        let d = &mut self.discriminator;
        match key {
            "task" => self.task = named(key, v, Task::parse)?,
            "sample_rate" => self.sample_rate = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "segment_length" => self.segment_length = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "lr_g" => self.lr_g = parse(key, v)?,
            "lr_d" => self.lr_d = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "adam_betas" => {
                let b: Vec<f64> = parse_list(key, v)?;
                let [b1, b2] = b[..] else {
                    return Err(Error::Config(format!(
                        "`{key}`: expected two values, got `{v}`"
                    )));
                };
                self.adam_betas = (b1, b2);
            }
            "epoch_steps" => self.epoch_steps = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "validate_every" => self.validate_every = parse(key, v)?,
            "validation_clips" => self.validation_clips = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "degrade.source_rate" => self.source_rate = parse(key, v)?,
            "degrade.families" => {
                self.filter_families = v
                    .split(',')
                    .map(|s| named(key, s, FilterFamily::parse))
                    .collect::<Result<Vec<_>>>()?
            }
            "degrade.order_min" => self.filter_orders.0 = parse(key, v)?,
            "degrade.order_max" => self.filter_orders.1 = parse(key, v)?,
            "degrade.max_align_lag" => self.max_align_lag = parse(key, v)?,
            "split.holdout_speakers" => {
                self.split.holdout_speakers = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "split.holdout_speaker_count" => self.split.holdout_speaker_count = parse(key, v)?,
            "split.holdout_utterances" => self.split.holdout_utterances = parse(key, v)?,
            "weights.lambda_fm" => self.weights.lambda_fm = parse(key, v)?,
            "weights.lambda_mel" => self.weights.lambda_mel = parse(key, v)?,
            "generator.n_mels" => g.n_mels = parse(key, v)?,
            "generator.n_fft" => g.n_fft = parse(key, v)?,
            "generator.hop" => g.hop = parse(key, v)?,
            "generator.mel_f_min" => g.mel_f_min = parse(key, v)?,
            "generator.mel_f_max" => {
                g.mel_f_max = if v == "nyquist" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "generator.use_spectral_unet" => g.use_spectral_unet = parse_bool(key, v)?,
            "generator.spectral_unet_widths" => g.spectral_unet_widths = parse_widths(key, v)?,
            "generator.spectral_unet_depth" => g.spectral_unet_depth = parse(key, v)?,
            "generator.upsampler.initial_channels" => g.upsampler.initial_channels = parse(key, v)?,
            "generator.upsampler.upsample_rates" => {
                g.upsampler.upsample_rates = parse_list(key, v)?
            }
            "generator.upsampler.upsample_kernels" => {
                g.upsampler.upsample_kernels = parse_list(key, v)?
            }
            "generator.upsampler.resblock_kernels" => {
                g.upsampler.resblock_kernels = parse_list(key, v)?
            }
            "generator.upsampler.resblock_dilations" => {
                g.upsampler.resblock_dilations = v
                    .split(';')
                    .map(|s| parse_list(key, s))
                    .collect::<Result<_>>()?
            }
            "generator.upsampler.out_channels" => g.upsampler.out_channels = parse(key, v)?,
            "generator.use_wave_unet" => g.use_wave_unet = parse_bool(key, v)?,
            "generator.wave_unet_widths" => g.wave_unet_widths = parse_widths(key, v)?,
            "generator.wave_unet_depth" => g.wave_unet_depth = parse(key, v)?,
            "generator.wave_unet_out_channels" => g.wave_unet_out_channels = parse(key, v)?,
            "generator.use_masknet" => g.use_masknet = parse_bool(key, v)?,
            "generator.masknet_widths" => g.masknet_widths = parse_widths(key, v)?,
            "generator.masknet_depth" => g.masknet_depth = parse(key, v)?,
            "generator.masknet_stft.n_fft" => g.masknet_stft.n_fft = parse(key, v)?,
            "generator.masknet_stft.hop" => g.masknet_stft.hop = parse(key, v)?,
            "generator.masknet_stft.win_length" => g.masknet_stft.win_length = parse(key, v)?,
            "generator.masknet_stft.window" => {
                g.masknet_stft.window = named(key, v, WindowKind::parse)?
            }
            "generator.merge" => g.merge = named(key, v, Merge::parse)?,
            "generator.init_std" => g.init_std = parse(key, v)?,
            "discriminator.kind" => d.kind = named(key, v, DiscriminatorKind::parse)?,
            "discriminator.k" => d.k = parse(key, v)?,
            "discriminator.channel_divisor" => d.channel_divisor = parse(key, v)?,
            "discriminator.spectral_norm" => d.spectral_norm = parse_bool(key, v)?,
            "discriminator.schedule" => d.schedule = named(key, v, Schedule::parse)?,
            "discriminator.periods" => d.periods = parse_list(key, v)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let g = &self.generator;
        let d = &self.discriminator;
        let s = &g.masknet_stft;
        vec![
            ("task", self.task.name().into()),
            ("sample_rate", self.sample_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("segment_length", self.segment_length.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("lr_g", self.lr_g.to_string()),
            ("lr_d", self.lr_d.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            (
                "adam_betas",
                format!("{},{}", self.adam_betas.0, self.adam_betas.1),
            ),
            ("epoch_steps", self.epoch_steps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("validate_every", self.validate_every.to_string()),
            ("validation_clips", self.validation_clips.to_string()),
            ("log_every", self.log_every.to_string()),
            ("degrade.source_rate", self.source_rate.to_string()),
            (
                "degrade.families",
                self.filter_families
                    .iter()
                    .map(|f| f.name())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("degrade.order_min", self.filter_orders.0.to_string()),
            ("degrade.order_max", self.filter_orders.1.to_string()),
            ("degrade.max_align_lag", self.max_align_lag.to_string()),
            (
                "split.holdout_speakers",
                self.split.holdout_speakers.join(","),
            ),
            (
                "split.holdout_speaker_count",
                self.split.holdout_speaker_count.to_string(),
            ),
            (
                "split.holdout_utterances",
                self.split.holdout_utterances.to_string(),
            ),
            ("weights.lambda_fm", self.weights.lambda_fm.to_string()),
            ("weights.lambda_mel", self.weights.lambda_mel.to_string()),
            ("generator.n_mels", g.n_mels.to_string()),
            ("generator.n_fft", g.n_fft.to_string()),
            ("generator.hop", g.hop.to_string()),
            ("generator.mel_f_min", g.mel_f_min.to_string()),
            (
                "generator.mel_f_max",
                g.mel_f_max.map_or("nyquist".into(), |f| f.to_string()),
            ),
            (
                "generator.use_spectral_unet",
                g.use_spectral_unet.to_string(),
            ),
            (
                "generator.spectral_unet_widths",
                join(&g.spectral_unet_widths),
            ),
            (
                "generator.spectral_unet_depth",
                g.spectral_unet_depth.to_string(),
            ),
            (
                "generator.upsampler.initial_channels",
                g.upsampler.initial_channels.to_string(),
            ),
            (
                "generator.upsampler.upsample_rates",
                join(&g.upsampler.upsample_rates),
            ),
            (
                "generator.upsampler.upsample_kernels",
                join(&g.upsampler.upsample_kernels),
            ),
            (
                "generator.upsampler.resblock_kernels",
                join(&g.upsampler.resblock_kernels),
            ),
            (
                "generator.upsampler.resblock_dilations",
                g.upsampler
                    .resblock_dilations
                    .iter()
                    .map(|d| join(d))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            (
                "generator.upsampler.out_channels",
                g.upsampler.out_channels.to_string(),
            ),
            ("generator.use_wave_unet", g.use_wave_unet.to_string()),
            ("generator.wave_unet_widths", join(&g.wave_unet_widths)),
            ("generator.wave_unet_depth", g.wave_unet_depth.to_string()),
            (
                "generator.wave_unet_out_channels",
                g.wave_unet_out_channels.to_string(),
            ),
            ("generator.use_masknet", g.use_masknet.to_string()),
            ("generator.masknet_widths", join(&g.masknet_widths)),
            ("generator.masknet_depth", g.masknet_depth.to_string()),
            ("generator.masknet_stft.n_fft", s.n_fft.to_string()),
            ("generator.masknet_stft.hop", s.hop.to_string()),
            (
                "generator.masknet_stft.win_length",
                s.win_length.to_string(),
            ),
            ("generator.masknet_stft.window", s.window.name().into()),
            ("generator.merge", g.merge.name().into()),
            ("generator.init_std", g.init_std.to_string()),
            ("discriminator.kind", d.kind.name().into()),
            ("discriminator.k", d.k.to_string()),
            (
                "discriminator.channel_divisor",
                d.channel_divisor.to_string(),
            ),
            ("discriminator.spectral_norm", d.spectral_norm.to_string()),
            ("discriminator.schedule", d.schedule.name().into()),
            ("discriminator.periods", join(&d.periods)),
        ]
    }

    /// `key=value` lines that [`Self::parse_text`] reads back exactly.
    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; the first bad line aborts.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Applies `key=value` overrides (as given on a command line).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            hop: self.generator.hop,
            n_fft: self.generator.n_fft,
            win_length: self.generator.n_fft,
            window: WindowKind::Hann,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights.validate()?;
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.segment_length == 0 || !self.segment_length.is_multiple_of(256) {
            return bad(format!(
                "segment_length {} must be a positive multiple of 256",
                self.segment_length
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        for (k, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("adam_betas must lie in [0, 1), got {b1},{b2}"));
        }
        if self.task == Task::Bwe {
            self.degradation().validate()?;
        }
        Ok(())
    }

    /// BWE degradation parameters.
    pub fn degradation(&self) -> crate::degrade::DegradationSpec {
        crate::degrade::DegradationSpec {
            families: self.filter_families.clone(),
            order_range: self.filter_orders,
            max_align_lag: self.max_align_lag,
            ..crate::degrade::DegradationSpec::bwe(self.source_rate, self.sample_rate, self.seed)
        }
    }
}
