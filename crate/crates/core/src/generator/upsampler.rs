use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Bound, Conv, Init, Norm, ParamStore};
use crate::tensor::{Float, Var};

const LRELU_SLOPE: f64 = 0.1;
/// Slope of the activation before the output conv.
const POST_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct UpsamplerConfig {
    pub initial_channels: usize,
    pub upsample_rates: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<Vec<usize>>,
    pub out_channels: usize,
}

impl Default for UpsamplerConfig {
    fn default() -> Self {
        Self {
            initial_channels: 128,
            upsample_rates: vec![8, 8, 2, 2],
            upsample_kernels: vec![16, 16, 4, 4],
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![vec![1, 3, 5]; 3],
            out_channels: 8,
        }
    }
}

impl UpsamplerConfig {
    pub fn total_rate(&self) -> usize {
        self.upsample_rates.iter().product()
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.upsample_rates.is_empty()
            || self.upsample_rates.len() != self.upsample_kernels.len()
        {
            return bad(
                "upsample_rates and upsample_kernels must be non-empty and equally long".into(),
            );
        }
        if self.total_rate() != hop {
            return bad(format!(
                "product of upsample_rates is {}, hop is {hop}",
                self.total_rate()
            ));
        }
        for (&u, &k) in self.upsample_rates.iter().zip(&self.upsample_kernels) {
            if u == 0 || k < u || (k - u) % 2 != 0 {
                return bad(format!(
                    "upsample kernel {k} must be ≥ rate {u} with an even difference"
                ));
            }
        }
        if self.resblock_kernels.is_empty()
            || self.resblock_kernels.len() != self.resblock_dilations.len()
        {
            return bad(
                "resblock_kernels and resblock_dilations must be non-empty and equally long".into(),
            );
        }
        if self.resblock_kernels.iter().any(|k| k % 2 == 0)
            || self.resblock_dilations.iter().flatten().any(|&d| d == 0)
        {
            return bad("resblock kernels must be odd and dilations positive".into());
        }
        if self.out_channels == 0 {
            return bad("upsampler out_channels must be ≥ 1".into());
        }
        if self.initial_channels >> self.upsample_rates.len() == 0 {
            return bad(format!(
                "initial_channels {} too small for {} halvings",
                self.initial_channels,
                self.upsample_rates.len()
            ));
        }
        Ok(())
    }
}

/// One multi-receptive-field branch: pairs of (dilated, plain) convs with
/// residual connections.
#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    convs1: Vec<Conv>,
    convs2: Vec<Conv>,
}

/// Mel-rate features to `out_channels` waveform-rate sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Upsampler {
    pub config: UpsamplerConfig,
    conv_pre: Conv,
    ups: Vec<Conv>,
    blocks: Vec<Vec<ResBlock>>,
    conv_post: Conv,
}

impl Upsampler {
    pub fn new(name: &str, in_channels: usize, config: UpsamplerConfig) -> Self {
        let c0 = config.initial_channels;
        let wn = Norm::Weight;
        let conv_pre = Conv::new1d(format!("{name}.conv_pre"), in_channels, c0, 7)
            .same()
            .norm(wn);
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for (i, (&u, &k)) in config
            .upsample_rates
            .iter()
            .zip(&config.upsample_kernels)
            .enumerate()
        {
            let (ci, co) = (c0 >> i, c0 >> (i + 1));
            ups.push(
                Conv::new1d(format!("{name}.ups.{i}"), ci, co, k)
                    .transposed()
                    .stride([1, u])
                    .padding([0, (k - u) / 2])
                    .norm(wn),
            );
            let level = config
                .resblock_kernels
                .iter()
                .zip(&config.resblock_dilations)
                .enumerate()
                .map(|(j, (&rk, dils))| {
                    let p = format!("{name}.blocks.{i}.{j}");
                    ResBlock {
                        convs1: dils
                            .iter()
                            .enumerate()
                            .map(|(l, &d)| {
                                Conv::new1d(format!("{p}.convs1.{l}"), co, co, rk)
                                    .dilation([1, d])
                                    .same()
                                    .norm(wn)
                            })
                            .collect(),
                        convs2: (0..dils.len())
                            .map(|l| {
                                Conv::new1d(format!("{p}.convs2.{l}"), co, co, rk)
                                    .same()
                                    .norm(wn)
                            })
                            .collect(),
                    }
                })
                .collect();
            blocks.push(level);
        }
        let last = c0 >> config.upsample_rates.len();
        let conv_post = Conv::new1d(format!("{name}.conv_post"), last, config.out_channels, 7)
            .same()
            .norm(wn);
        Self {
            config,
            conv_pre,
            ups,
            blocks,
            conv_post,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Conv> {
        std::iter::once(&self.conv_pre)
            .chain(&self.ups)
            .chain(
                self.blocks
                    .iter()
                    .flatten()
                    .flat_map(|b| b.convs1.iter().chain(&b.convs2)),
            )
            .chain(std::iter::once(&self.conv_post))
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Conv::num_params).sum()
    }

    pub fn register<T: Float>(&self, store: &mut ParamStore<T>, std: f64, rng: &mut impl Rng) {
        for c in self.layers() {
            c.register(store, Init::Normal(std), Init::Const(0.0), rng);
        }
    }

    /// `[B, C_in, frames] -> [B, out_channels, frames · hop]`.
    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let mut h = self.conv_pre.forward1d(p, x);
        let n_kernels = self.config.resblock_kernels.len() as f64;
        for (up, level) in self.ups.iter().zip(&self.blocks) {
            h = up.forward1d(p, &h.leaky_relu(LRELU_SLOPE));
            let mut acc: Option<Var<T>> = None;
            for block in level {
                let mut r = h.clone();
                for (c1, c2) in block.convs1.iter().zip(&block.convs2) {
                    let t = c1.forward1d(p, &r.leaky_relu(LRELU_SLOPE));
                    let t = c2.forward1d(p, &t.leaky_relu(LRELU_SLOPE));
                    r = r.add(&t);
                }
                acc = Some(match acc {
                    Some(a) => a.add(&r),
                    None => r,
                });
            }
            h = acc
                .expect("at least one resblock")
                .mul_scalar(1.0 / n_kernels);
        }
        self.conv_post.forward1d(p, &h.leaky_relu(POST_SLOPE))
    }
}
