//! Fixtures shared by the benchmarks.

use hifipp::degrade::{degrade_bwe, DegradationSpec};
use hifipp::training::{Batch, TrainConfig, Trainer, P};
use hifipp::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RATE: u32 = 16000;

/// Uniform noise in `[-0.5, 0.5)`.
pub fn noise(len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect(),
        RATE,
    )
    .expect("finite samples")
}

/// A BWE pair of `len` samples: band-limited input, full-band target.
pub fn bwe_pair(len: usize, seed: u64) -> (Waveform, Waveform) {
    let y = noise(len, seed);
    let x = degrade_bwe(
        &y,
        &DegradationSpec::bwe(2000, RATE, seed),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .expect("valid spec");
    (x, y)
}

/// Trainer on the tiny BWE preset with one `len`-sample batch.
pub fn tiny_trainer(len: usize) -> (Trainer, Batch<P>) {
    let mut cfg = TrainConfig::preset("bwe,tiny").expect("known presets");
    cfg.batch_size = 1;
    cfg.segment_length = len;
    let trainer = Trainer::new(cfg).expect("valid config");
    (trainer, Batch::from_pairs(&[bwe_pair(len, 1)]))
}
