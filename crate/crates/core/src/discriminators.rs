//! Waveform discriminators: the single-scale ensemble used for training and
//! the multi-scale / multi-period references kept for ablations.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Bound, Conv, Init, Norm, ParamStore};
use crate::tensor::{Float, PadMode, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorKind {
    /// `k` identical members on the raw waveform.
    Ssd,
    /// Three members on ×1, ×2 and ×4 average-pooled audio.
    Msd,
    /// One member per period on periodic reshapings.
    Mpd,
    /// The three scale members followed by the period members.
    MsdMpd,
}

impl DiscriminatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ssd => "ssd",
            Self::Msd => "msd",
            Self::Mpd => "mpd",
            Self::MsdMpd => "msd+mpd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Ssd, Self::Msd, Self::Mpd, Self::MsdMpd]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

impl fmt::Display for DiscriminatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer schedule of a scale (SSD/MSD) member before channel division.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// 128→128→256→512→1024→1024→1024, kernel 41, strides 2/2/4/4/1.
    HifiGan,
    /// 16→64→256→1024→1024→1024, kernel 41, stride 4, groups 4/16/64/256.
    MelGan,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Self::HifiGan => "hifigan",
            Self::MelGan => "melgan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::HifiGan, Self::MelGan]
            .into_iter()
            .find(|k| k.name() == s)
    }

    /// `(cin, cout, kernel, stride, groups, padding)` of every hidden conv,
    /// then the output projection, at full width.
    fn layers(self) -> (Vec<[usize; 6]>, [usize; 6]) {
        match self {
            Self::HifiGan => (
                vec![
                    [1, 128, 15, 1, 1, 7],
                    [128, 128, 41, 2, 4, 20],
                    [128, 256, 41, 2, 16, 20],
                    [256, 512, 41, 4, 16, 20],
                    [512, 1024, 41, 4, 16, 20],
                    [1024, 1024, 41, 1, 16, 20],
                    [1024, 1024, 5, 1, 1, 2],
                ],
                [1024, 1, 3, 1, 1, 1],
            ),
            Self::MelGan => (
                vec![
                    [1, 16, 15, 1, 1, 7],
                    [16, 64, 41, 4, 4, 20],
                    [64, 256, 41, 4, 16, 20],
                    [256, 1024, 41, 4, 64, 20],
                    [1024, 1024, 41, 4, 256, 20],
                    [1024, 1024, 5, 1, 1, 2],
                ],
                [1024, 1, 3, 1, 1, 1],
            ),
        }
    }

    fn slope(self) -> f64 {
        match self {
            Self::HifiGan => 0.1,
            Self::MelGan => 0.2,
        }
    }
}

pub const MPD_PERIODS: [usize; 5] = [2, 3, 5, 7, 11];
const MPD_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    /// Member count for SSD; fixed by the kind otherwise.
    pub k: usize,
    /// Divides hidden channel widths; input and output stay at one channel.
    pub channel_divisor: usize,
    /// Spectral norm on the first MSD member.
    pub spectral_norm: bool,
    pub schedule: Schedule,
    pub periods: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self::ssd(3)
    }
}

impl DiscriminatorConfig {
    pub fn ssd(k: usize) -> Self {
        Self {
            kind: DiscriminatorKind::Ssd,
            k,
            channel_divisor: 4,
            spectral_norm: false,
            schedule: Schedule::HifiGan,
            periods: MPD_PERIODS.to_vec(),
        }
    }

    pub fn msd() -> Self {
        Self {
            kind: DiscriminatorKind::Msd,
            k: 3,
            channel_divisor: 1,
            spectral_norm: true,
            ..Self::ssd(3)
        }
    }

    pub fn mpd() -> Self {
        Self {
            kind: DiscriminatorKind::Mpd,
            k: MPD_PERIODS.len(),
            channel_divisor: 1,
            ..Self::ssd(5)
        }
    }

    pub fn msd_mpd() -> Self {
        Self {
            kind: DiscriminatorKind::MsdMpd,
            ..Self::msd()
        }
    }

    /// Number of members this configuration builds.
    pub fn members(&self) -> usize {
        match self.kind {
            DiscriminatorKind::Ssd => self.k,
            DiscriminatorKind::Msd => 3,
            DiscriminatorKind::Mpd => self.periods.len(),
            DiscriminatorKind::MsdMpd => 3 + self.periods.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.members() == 0 {
            return bad("discriminator needs at least one member".into());
        }
        if self.channel_divisor == 0 {
            return bad("channel_divisor must be ≥ 1".into());
        }
        let (scale, period) = match self.kind {
            DiscriminatorKind::Ssd | DiscriminatorKind::Msd => (true, false),
            DiscriminatorKind::Mpd => (false, true),
            DiscriminatorKind::MsdMpd => (true, true),
        };
        if period && self.periods.iter().any(|&p| p < 2) {
            return bad(format!("periods must be ≥ 2, got {:?}", self.periods));
        }
        let mut widths: Vec<(usize, usize)> = Vec::new();
        if scale {
            widths.extend(self.schedule.layers().0.iter().map(|l| (l[1], l[4])));
        }
        if period {
            widths.extend(mpd_layers().0.iter().map(|l| (l[1], 1)));
        }
        for (c, g) in widths {
            let c = (c / self.channel_divisor).max(1);
            if !c.is_multiple_of(g) || c < g {
                return bad(format!(
                    "channel_divisor {} leaves {c} channels, not divisible into {g} groups",
                    self.channel_divisor
                ));
            }
        }
        Ok(())
    }
}

/// Period-member schedule in the same `(cin, cout, kernel, stride, groups,
/// padding)` layout, kernels and strides running along time.
fn mpd_layers() -> (Vec<[usize; 6]>, [usize; 6]) {
    (
        vec![
            [1, 32, 5, 3, 1, 2],
            [32, 128, 5, 3, 1, 2],
            [128, 512, 5, 3, 1, 2],
            [512, 1024, 5, 3, 1, 2],
            [1024, 1024, 5, 1, 1, 2],
        ],
        [1024, 1, 3, 1, 1, 1],
    )
}

/// Logits and hidden activations of one member.
pub struct DiscriminatorOutput<T: Float> {
    /// `[B, n]` patch logits.
    pub score: Var<T>,
    pub features: Vec<Var<T>>,
}

#[derive(Clone, Debug, PartialEq)]
enum Front {
    /// Applies `avg_pool(4, 2, 1)` this many times.
    Pool(usize),
    Period(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubDiscriminator {
    front: Front,
    layers: Vec<Conv>,
    post: Conv,
    slope: f64,
}

impl SubDiscriminator {
    fn build(
        name: &str,
        sched: &[[usize; 6]],
        post: [usize; 6],
        divisor: usize,
        norm: Norm,
        front: Front,
        slope: f64,
    ) -> Self {
        let period = matches!(front, Front::Period(_));
        let ch = |c: usize| if c == 1 { 1 } else { (c / divisor).max(1) };
        let conv = |n: String, l: [usize; 6]| {
            let [ci, co, k, s, g, p] = l;
            if period {
                Conv::new2d(n, ch(ci), ch(co), [k, 1])
                    .stride([s, 1])
                    .padding([p, 0])
                    .norm(norm)
            } else {
                Conv::new1d(n, ch(ci), ch(co), k)
                    .stride([1, s])
                    .padding([0, p])
                    .groups(g)
                    .norm(norm)
            }
        };
        Self {
            layers: sched
                .iter()
                .enumerate()
                .map(|(i, &l)| conv(format!("{name}.convs.{i}"), l))
                .collect(),
            post: conv(format!("{name}.conv_post"), post),
            front,
            slope,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Conv> {
        self.layers.iter().chain(std::iter::once(&self.post))
    }

    /// Hidden convs only, input first.
    pub fn hidden_layers(&self) -> &[Conv] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Conv::num_params).sum()
    }

    pub fn pooling(&self) -> usize {
        match self.front {
            Front::Pool(n) => n,
            Front::Period(_) => 0,
        }
    }

    fn register<T: Float>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        for c in self.layers() {
            let [_, cig, kh, kw] = c.weight_shape();
            let bound = 1.0 / ((cig * kh * kw) as f64).sqrt();
            c.register(store, Init::Uniform(bound), Init::Uniform(bound), rng);
        }
    }

    /// Input view this member convolves, `[B, 1, H, W]`.
    fn front<T: Float>(&self, x: &Var<T>) -> Var<T> {
        let b = x.dim(0);
        match self.front {
            Front::Pool(n) => {
                let mut h = x.reshape(&[b, 1, x.dim(1)]);
                for _ in 0..n {
                    h = h.avg_pool1d(4, 2, 1);
                }
                let l = h.dim(2);
                h.reshape(&[b, 1, 1, l])
            }
            Front::Period(p) => {
                let len = x.dim(1);
                let padded = len.next_multiple_of(p);
                let mut h = x.clone();
                if padded > len {
                    h = h.pad(1, 0, padded - len, PadMode::Reflect);
                }
                h.reshape(&[b, 1, padded / p, p])
            }
        }
    }

    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> DiscriminatorOutput<T> {
        let mut h = self.front(x);
        let mut features = Vec::with_capacity(self.layers.len());
        for c in &self.layers {
            h = c.forward(p, &h).leaky_relu(self.slope);
            features.push(h.clone());
        }
        let s = self.post.forward(p, &h);
        let b = s.dim(0);
        let n = s.value().len() / b;
        DiscriminatorOutput {
            score: s.reshape(&[b, n]),
            features,
        }
    }
}

/// All members of one discriminator configuration. Members have
/// independent parameter stores.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    config: DiscriminatorConfig,
    members: Vec<SubDiscriminator>,
}

impl Ensemble {
    pub fn new(config: &DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let scale = |i: usize| {
            let (l, post) = c.schedule.layers();
            let (norm, pool) = match c.kind {
                DiscriminatorKind::Ssd => (Norm::Weight, 0),
                _ if i == 0 && c.spectral_norm => (Norm::Spectral, i),
                _ => (Norm::Weight, i),
            };
            SubDiscriminator::build(
                "d",
                &l,
                post,
                c.channel_divisor,
                norm,
                Front::Pool(pool),
                c.schedule.slope(),
            )
        };
        let period = |p: usize| {
            let (l, post) = mpd_layers();
            SubDiscriminator::build(
                "d",
                &l,
                post,
                c.channel_divisor,
                Norm::Weight,
                Front::Period(p),
                MPD_SLOPE,
            )
        };
        let members = match c.kind {
            DiscriminatorKind::Ssd | DiscriminatorKind::Msd => {
                (0..c.members()).map(scale).collect()
            }
            DiscriminatorKind::Mpd => c.periods.iter().map(|&p| period(p)).collect(),
            DiscriminatorKind::MsdMpd => (0..3)
                .map(scale)
                .chain(c.periods.iter().map(|&p| period(p)))
                .collect(),
        };
        Ok(Self {
            config: c.clone(),
            members,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> &SubDiscriminator {
        &self.members[i]
    }

    pub fn num_params(&self) -> usize {
        self.members.iter().map(SubDiscriminator::num_params).sum()
    }

    /// Parameters of member `i`, drawn from stream `i` of `seed`.
    pub fn init_member<T: Float>(&self, i: usize, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut store = ParamStore::new();
        self.members[i].register(&mut store, &mut rng);
        store
    }

    pub fn init_params<T: Float>(&self, seed: u64) -> Vec<ParamStore<T>> {
        (0..self.len()).map(|i| self.init_member(i, seed)).collect()
    }

    /// One power-iteration step for every spectrally normalised layer.
    pub fn refresh_spectral<T: Float>(&self, i: usize, store: &mut ParamStore<T>) {
        for c in self.members[i].layers() {
            c.refresh_spectral(store);
        }
    }

    /// Runs every member on `x [B, L]`, in member order.
    pub fn forward<T: Float>(
        &self,
        params: &[Bound<T>],
        x: &Var<T>,
    ) -> Result<Vec<DiscriminatorOutput<T>>> {
        if x.shape().len() != 2 || x.dim(0) == 0 || x.dim(1) == 0 {
            return Err(Error::Shape(format!(
                "discriminator input must be a non-empty [B, L] batch, got {:?}",
                x.shape()
            )));
        }
        if params.len() != self.len() {
            return Err(Error::Parameter(format!(
                "{} parameter sets for {} members",
                params.len(),
                self.len()
            )));
        }
        Ok(self
            .members
            .iter()
            .zip(params)
            .map(|(m, p)| m.forward(p, x))
            .collect())
    }
}
