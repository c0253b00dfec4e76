use super::Waveform;
use crate::error::{Error, Result};

/// Filter half-length per unit of `max(up, down)`; gives 64 taps per phase.
const HALF_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.0;
/// Passband edge as a fraction of the lower Nyquist rate. The Kaiser
/// transition band is centred here, so the stopband starts at Nyquist.
const ROLLOFF: f64 = 0.92;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn kaiser(n: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let r = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Anti-aliasing prototype at the upsampled rate, normalised to unit DC gain
/// per output phase on average.
fn prototype(up: usize, down: usize) -> Vec<f64> {
    let q = up.max(down);
    let half = HALF_TAPS * q;
    let fc = ROLLOFF / q as f64;
    let win = kaiser(2 * half + 1, KAISER_BETA);
    let mut h: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let x = fc * (i as f64 - half as f64);
            let sinc = if x == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            fc * sinc * win[i]
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v *= up as f64 / sum;
    }
    h
}

/// Output length `round(len · target / source)`.
pub fn resampled_len(len: usize, source: u32, target: u32) -> usize {
    ((len as u128 * target as u128 * 2 + source as u128) / (2 * source as u128)) as usize
}

/// Rational polyphase resampling with a Kaiser-windowed sinc filter.
/// The filter delay is compensated so output sample `j` is aligned with
/// input time `j · source / target`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Parameter(
            "target sample rate must be positive".into(),
        ));
    }
    let source = w.sample_rate();
    if source == target_rate {
        return Ok(w.clone());
    }
    let g = gcd(source as u64, target_rate as u64);
    let (up, down) = (
        (target_rate as u64 / g) as usize,
        (source as u64 / g) as usize,
    );
    let h = prototype(up, down);
    let half = (h.len() - 1) / 2;
    let x = w.samples();
    let out_len = resampled_len(x.len(), source, target_rate);
    let mut out = vec![0.0; out_len];
    for (j, y) in out.iter_mut().enumerate() {
        // Position on the upsampled grid of the filter's centre tap.
        let n = j * down + half;
        let k_hi = (n / up).min(x.len().saturating_sub(1));
        let k_lo = n.saturating_sub(2 * half).div_ceil(up);
        let mut acc = 0.0;
        let mut k = k_lo;
        while k <= k_hi && k < x.len() {
            acc += x[k] * h[n - k * up];
            k += 1;
        }
        *y = acc;
    }
    Waveform::new(out, target_rate)
}
