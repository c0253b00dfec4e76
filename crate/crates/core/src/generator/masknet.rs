use rand::Rng;

use super::unet::UNet2d;
use crate::audio::{StftConfig, MEL_FLOOR};
use crate::features::MAGNITUDE_EPS;
use crate::nn::{Bound, ParamStore};
use crate::tensor::{Float, PadMode, Tensor, Var};

/// Bias that makes `softplus(0 + b) = 1`: `ln(e − 1)`.
pub fn unit_softplus_bias() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

/// What the mask head emits.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskSource {
    Network,
    /// Fixed factors `[N, bins, frames]` (one row per channel), bypassing
    /// the network.
    Fixed(Tensor<f64>),
}

/// Intermediate values exposed for inspection.
pub struct MaskNetTrace<T: Float> {
    /// `[2, N, bins, frames]` spectrum of the padded input channels.
    pub input_spec: Var<T>,
    /// `[2, N, bins, frames]` after masking, before the inverse STFT.
    pub masked_spec: Var<T>,
    /// `[N, bins, frames]` factors applied.
    pub mask: Var<T>,
    /// `[B, m, L]` channels after the inverse STFT, before merging.
    pub channels: Var<T>,
}

/// Per-channel STFT amplitude masking with phases kept.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskNet {
    pub stft: StftConfig,
    window: Vec<f64>,
    unet: UNet2d,
}

impl MaskNet {
    pub fn new(name: &str, widths: [usize; 4], depth: usize, stft: StftConfig) -> Self {
        let unet = UNet2d::new(name, 1, 1, widths, depth, [3, 3], [2, 2]);
        Self {
            window: stft.window(),
            stft,
            unet,
        }
    }

    pub fn unet(&self) -> &UNet2d {
        &self.unet
    }

    pub fn num_params(&self) -> usize {
        self.unet.num_params()
    }

    pub fn register<T: Float>(&self, store: &mut ParamStore<T>, std: f64, rng: &mut impl Rng) {
        self.unet.register(store, std, rng);
        let bias = format!("{}.bias", self.unet.out_conv().name);
        store
            .get_mut(&bias)
            .expect("out_conv has a bias")
            .data_mut()
            .fill(T::of(unit_softplus_bias()));
    }

    /// `[N, bins, frames]` positive factors from log-amplitudes.
    fn predict<T: Float>(&self, p: &Bound<T>, mag: &Var<T>) -> Var<T> {
        let (n, bins, frames) = (mag.dim(0), mag.dim(1), mag.dim(2));
        let [gh, gw] = self.unet.granularity();
        let (ph, pw) = (
            bins.next_multiple_of(gh) - bins,
            frames.next_multiple_of(gw) - frames,
        );
        let floor = MEL_FLOOR.ln();
        let feat = mag
            .clamp_min(MEL_FLOOR)
            .ln()
            .reshape(&[n, 1, bins, frames])
            .pad(2, 0, ph, PadMode::Constant(floor))
            .pad(3, 0, pw, PadMode::Constant(floor));
        let out = self.unet.forward(p, &feat);
        out.narrow(2, 0, bins)
            .narrow(3, 0, frames)
            .reshape(&[n, bins, frames])
            .softplus()
    }

    /// `x [B, m, L] -> [B, m, L]` masked channels (unmerged). `L` must be a
    /// multiple of the STFT hop.
    pub fn forward<T: Float>(
        &self,
        p: &Bound<T>,
        x: &Var<T>,
        source: &MaskSource,
    ) -> MaskNetTrace<T> {
        let (b, m, len) = (x.dim(0), x.dim(1), x.dim(2));
        assert!(
            len % self.stft.hop == 0,
            "masknet input length {len} not a multiple of {}",
            self.stft.hop
        );
        let pad = self.stft.pad();
        let flat = x.reshape(&[b * m, len]).pad(1, pad, pad, PadMode::Reflect);
        let spec = flat.stft(self.stft.framing(), &self.window);
        let mask = match source {
            MaskSource::Network => self.predict(p, &spec.magnitude(MAGNITUDE_EPS)),
            MaskSource::Fixed(t) => {
                assert_eq!(t.shape(), &spec.shape()[1..], "fixed mask shape");
                Var::constant(t.cast())
            }
        };
        let shape = mask.shape().to_vec();
        let masked = spec.mul(&mask.reshape(&[1, shape[0], shape[1], shape[2]]));
        let wave = masked
            .istft(self.stft.framing(), &self.window)
            .narrow(1, pad, len)
            .reshape(&[b, m, len]);
        MaskNetTrace {
            input_spec: spec,
            masked_spec: masked,
            mask,
            channels: wave,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::rand_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> (MaskNet, ParamStore<f64>) {
        let m = MaskNet::new("mask", [2, 3, 4, 5], 1, StftConfig::default());
        let mut s = ParamStore::new();
        m.register(&mut s, 0.01, &mut ChaCha8Rng::seed_from_u64(0));
        (m, s)
    }

    #[test]
    fn head_bias_gives_unit_factors() {
        assert!((unit_softplus_bias().exp().ln_1p() - 1.0).abs() < 1e-15);
        let (m, s) = net();
        let x = Var::constant(rand_tensor(&[1, 2, 2048], 1));
        let t = m.forward(&s.bind(None), &x, &MaskSource::Network);
        assert_eq!(t.mask.shape(), &[2, 513, 8]);
        assert!(t
            .mask
            .value()
            .data()
            .iter()
            .all(|&v| v > 0.0 && (v - 1.0).abs() < 0.2));
    }

    #[test]
    fn unit_mask_reconstructs_the_input() {
        let (m, s) = net();
        let x = Var::constant(rand_tensor(&[2, 3, 4096], 2));
        let ones = Tensor::full(&[6, 513, 16], 1.0);
        let y = m
            .forward(&s.bind(None), &x, &MaskSource::Fixed(ones))
            .channels;
        let err: f64 = y
            .value()
            .data()
            .iter()
            .zip(x.value().data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x.value().data().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-10, "{}", err / norm);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (m, s) = net();
        let y = m.forward(
            &s.bind(None),
            &Var::constant(Tensor::zeros(&[1, 2, 2048])),
            &MaskSource::Network,
        );
        assert!(y.channels.value().data().iter().all(|&v| v == 0.0));
    }
}
