//! Property tests over the public API.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hifipp::audio::{istft, resample, resampled_len, stft, StftConfig};
use hifipp::degrade::{degrade_bwe_with, mix_at_snr, DegradationSpec, FilterFamily};
use hifipp::discriminators::{DiscriminatorConfig, Ensemble};
use hifipp::generator::{Generator, GeneratorConfig};
use hifipp::losses::{feature_matching_loss, lsgan_d_loss, lsgan_g_loss};
use hifipp::metrics::{lsd, si_sdr};
use hifipp::tensor::{Tensor, Var};
use hifipp::training::TrainConfig;
use hifipp::Waveform;

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn wave(len: usize, seed: u64) -> Waveform {
    Waveform::new(noise(len, seed), 16000).unwrap()
}

fn var(shape: &[usize], seed: u64) -> Var<f64> {
    Var::constant(Tensor::from_f64(
        shape,
        &noise(shape.iter().product(), seed),
    ))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stft_round_trip_is_exact(frames in 4usize..40, seed in any::<u64>()) {
        let cfg = StftConfig::default();
        let w = wave(frames * cfg.hop, seed);
        let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
        let err: f64 = back.samples().iter().zip(w.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err / w.norm() < 1e-10);
    }

    #[test]
    fn si_sdr_ignores_estimate_gain(seed in any::<u64>(), gain in 0.01f64..100.0) {
        let r = wave(4000, seed);
        let e = Waveform::new(r.samples().iter().zip(noise(4000, seed ^ 1)).map(|(a, b)| a + 0.3 * b).collect(), 16000).unwrap();
        let (a, b) = (si_sdr(&e, &r).unwrap(), si_sdr(&e.scaled(gain), &r).unwrap());
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn lsd_is_nonnegative_and_zero_on_identity(seed in any::<u64>()) {
        let cfg = StftConfig::default();
        let (a, b) = (wave(4096, seed), wave(4096, seed ^ 7));
        prop_assert!(lsd(&a, &b, &cfg).unwrap() >= 0.0);
        prop_assert_eq!(lsd(&a, &a, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn resampling_keeps_rate_and_length_contract(len in 1usize..6000, target in prop::sample::select(vec![8000u32, 22050, 44100, 48000])) {
        let out = resample(&wave(len, len as u64), target).unwrap();
        prop_assert_eq!(out.sample_rate(), target);
        prop_assert_eq!(out.len(), resampled_len(len, 16000, target));
        prop_assert_eq!(out.len(), (len as f64 * target as f64 / 16000.0).round() as usize);
    }

    #[test]
    fn degradation_keeps_length_and_rate(len in 2048usize..6000, order in 2usize..=10, fam in 0usize..4, s in prop::sample::select(vec![2000u32, 4000, 8000])) {
        let spec = DegradationSpec::bwe(s, 16000, 0);
        let (x, _) = degrade_bwe_with(&wave(len, 3), &spec, FilterFamily::ALL[fam], order).unwrap();
        prop_assert_eq!(x.len(), len);
        prop_assert_eq!(x.sample_rate(), 16000);
        prop_assert!(x.samples().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mixing_hits_the_requested_snr(seed in any::<u64>(), snr in -5.0f64..20.0) {
        let y = wave(3000, seed);
        let n = wave(3000, seed ^ 9);
        let x = mix_at_snr(&y, &n, snr).unwrap();
        let residual: f64 = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
        let got = 10.0 * (y.energy() / residual).log10();
        prop_assert!((got - snr).abs() < 1e-9, "{got} vs {snr}");
    }

    #[test]
    fn adversarial_losses_are_nonnegative(seed in any::<u64>(), k in 1usize..5) {
        prop_assert!(lsgan_d_loss(&var(&[2, 9], seed), &var(&[2, 9], seed ^ 1)).value().item() >= 0.0);
        let fakes: Vec<_> = (0..k).map(|i| var(&[1, 5], seed ^ (i as u64 + 2))).collect();
        prop_assert!(lsgan_g_loss(&fakes).value().item() >= 0.0);
        let f = |s: u64| vec![vec![var(&[1, 4], s), var(&[2, 3], s ^ 5)]];
        prop_assert!(feature_matching_loss(&f(seed), &f(seed ^ 11)).unwrap().value().item() >= 0.0);
    }

    #[test]
    fn padded_length_is_valid(len in 1usize..100_000) {
        let g = Generator::new(&GeneratorConfig::tiny(), 16000).unwrap();
        let p = g.padded_length(len);
        prop_assert!(p >= len && p >= g.min_length());
        prop_assert_eq!(p % g.granularity(), 0);
        prop_assert!(p < len.max(g.min_length()) + g.granularity());
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), steps in 1u64..1_000_000, batch in 1usize..64, lambda in 0.0f64..100.0, k in 1usize..6) {
        let mut c = TrainConfig::preset("se").unwrap();
        c.seed = seed;
        c.total_steps = steps;
        c.batch_size = batch;
        c.weights.lambda_mel = lambda;
        c.discriminator.k = k;
        prop_assert_eq!(TrainConfig::parse_text(&c.to_text()).unwrap(), c);
    }
}

#[test]
fn ssd_members_share_parameter_shapes() {
    let ens = Ensemble::new(&DiscriminatorConfig::ssd(3)).unwrap();
    let params = ens.init_params::<f64>(0);
    let shapes = |i: usize| -> Vec<Vec<usize>> {
        params[i]
            .iter()
            .map(|(_, t, _)| t.shape().to_vec())
            .collect()
    };
    assert_eq!(shapes(0), shapes(1));
    assert_eq!(shapes(1), shapes(2));
    assert_ne!(params[0].value(0), params[1].value(0));
}

#[test]
fn every_preset_validates() {
    for name in hifipp::training::PRESETS {
        let c = TrainConfig::preset(name).unwrap();
        c.validate().unwrap();
        Generator::new(&c.generator, c.sample_rate).unwrap();
        Ensemble::new(&c.discriminator).unwrap();
    }
}
