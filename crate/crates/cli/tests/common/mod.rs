#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hifipp::audio::{read_wav, stft, write_wav, StftConfig, WavEncoding};
use hifipp::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn hifipp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hifipp"))
        .args(args)
        .env("HIFIPP_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp paths")
}

/// Voiced, speech-like test signal: a gliding harmonic series up to
/// Nyquist under a formant-shaped envelope, gated into syllables, plus a
/// little breath noise.
pub fn speechlike(len: usize, rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(100.0..180.0);
    let glide = rng.random_range(-0.3..0.3);
    let formants: Vec<f64> = vec![
        rng.random_range(500.0..800.0),
        rng.random_range(1200.0..2200.0),
        rng.random_range(2500.0..3500.0),
    ];
    let syll = rng.random_range(3.0..5.0);
    let sr = rate as f64;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sr;
        let f = f0 * (1.0 + glide * (2.0 * std::f64::consts::PI * 0.7 * t).sin() * 0.2);
        phase += 2.0 * std::f64::consts::PI * f / sr;
        let mut v = 0.0;
        let mut h = 1.0;
        while h * f < sr / 2.0 {
            let fh = h * f;
            let env: f64 = formants
                .iter()
                .map(|&fc| 1.0 / (1.0 + ((fh - fc) / 300.0).powi(2)))
                .sum::<f64>()
                + 0.05;
            v += env * (h * phase).sin() / h.sqrt();
            h += 1.0;
        }
        let gate = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * syll * t).cos();
        out.push(0.1 * gate * v + 0.003 * rng.random_range(-1.0..1.0));
    }
    Waveform::new(out, rate).unwrap()
}

pub fn write(path: &Path, w: &Waveform) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_wav(path, w, WavEncoding::Float32).unwrap();
}

/// `<root>/<speaker>/<speaker>_<nnn>.wav` with distinct utterances.
pub fn bwe_corpus(root: &Path, speakers: &[&str], per_speaker: usize, len: usize) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for (si, s) in speakers.iter().enumerate() {
        for u in 0..per_speaker {
            let path = root.join(s).join(format!("{s}_{:03}.wav", u + 1));
            write(&path, &speechlike(len, 16000, (si * 1000 + u) as u64));
            out.push(path);
        }
    }
    out
}

/// Energy above `hz` over all frames.
pub fn band_energy(w: &Waveform, hz: f64) -> f64 {
    let cfg = StftConfig::default();
    let s = stft(w, &cfg).unwrap();
    let bin_hz = w.sample_rate() as f64 / cfg.n_fft as f64;
    let mut e = 0.0;
    for f in 0..s.frames() {
        for b in 0..s.bins() {
            if b as f64 * bin_hz > hz {
                e += s.get(b, f).norm_sqr();
            }
        }
    }
    e
}

pub fn read(path: &Path) -> Waveform {
    read_wav(path).unwrap()
}
