use std::f64::consts::PI;
use std::fmt;

use realfft::num_complex::Complex64 as C;

use super::analog::{self, Zpk};
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Chebyshev type I passband ripple (dB).
pub const CHEBYSHEV_RIPPLE_DB: f64 = 1.0;
/// Elliptic passband ripple (dB).
pub const ELLIPTIC_RIPPLE_DB: f64 = 1.0;
/// Elliptic minimum stopband attenuation (dB).
pub const ELLIPTIC_STOPBAND_DB: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterFamily {
    Butterworth,
    Chebyshev1,
    Bessel,
    Elliptic,
}

impl FilterFamily {
    pub const ALL: [FilterFamily; 4] = [
        FilterFamily::Butterworth,
        FilterFamily::Chebyshev1,
        FilterFamily::Bessel,
        FilterFamily::Elliptic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterFamily::Butterworth => "butterworth",
            FilterFamily::Chebyshev1 => "chebyshev1",
            FilterFamily::Bessel => "bessel",
            FilterFamily::Elliptic => "elliptic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl fmt::Display for FilterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Biquad `b0 + b1 z⁻¹ + b2 z⁻² / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    fn response(&self, z1: C) -> C {
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z1 * self.a[1] + z2 * self.a[2])
    }

    /// Both poles strictly inside the unit circle (Jury conditions).
    pub fn is_stable(&self) -> bool {
        let (a1, a2) = (self.a[1] / self.a[0], self.a[2] / self.a[0]);
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterDesign {
    pub family: FilterFamily,
    pub order: usize,
    pub cutoff: f64,
    pub sample_rate: u32,
    pub sections: Vec<Sos>,
}

impl FilterDesign {
    /// Complex gain at `freq` Hz.
    pub fn response(&self, freq: f64) -> C {
        let z1 = C::from_polar(1.0, -2.0 * PI * freq / self.sample_rate as f64);
        self.sections
            .iter()
            .fold(C::new(1.0, 0.0), |acc, s| acc * s.response(z1))
    }

    pub fn gain_db(&self, freq: f64) -> f64 {
        20.0 * self.response(freq).norm().log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Sos::is_stable)
    }
}

/// Digital low-pass via a prewarped bilinear transform of the analog prototype.
pub fn design_lowpass(
    family: FilterFamily,
    order: usize,
    cutoff: f64,
    rate: u32,
) -> Result<FilterDesign> {
    let fs = rate as f64;
    if !(1..=10).contains(&order) {
        return Err(Error::Parameter(format!(
            "filter order {order} outside [1, 10]"
        )));
    }
    if !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff} Hz must lie strictly inside (0, {}) Hz",
            fs / 2.0
        )));
    }
    let proto = match family {
        FilterFamily::Butterworth => analog::butterworth(order),
        FilterFamily::Chebyshev1 => analog::chebyshev1(order, CHEBYSHEV_RIPPLE_DB),
        FilterFamily::Bessel => analog::bessel(order),
        FilterFamily::Elliptic => analog::elliptic(order, ELLIPTIC_RIPPLE_DB, ELLIPTIC_STOPBAND_DB),
    };
    let wo = 2.0 * fs * (PI * cutoff / fs).tan();
    let digital = bilinear(lp2lp(proto, wo), fs);
    let sections = zpk_to_sos(&digital);
    let design = FilterDesign {
        family,
        order,
        cutoff,
        sample_rate: rate,
        sections,
    };
    if !design.is_stable() {
        return Err(Error::Parameter(format!(
            "{family} order {order} at {cutoff} Hz produced an unstable section"
        )));
    }
    Ok(design)
}

fn lp2lp(f: Zpk, wo: f64) -> Zpk {
    let deg = f.p.len() as i32 - f.z.len() as i32;
    Zpk {
        z: f.z.iter().map(|z| z * wo).collect(),
        p: f.p.iter().map(|p| p * wo).collect(),
        k: f.k * wo.powi(deg),
    }
}

fn bilinear(f: Zpk, fs: f64) -> Zpk {
    let fs2 = 2.0 * fs;
    let map = |s: &C| (fs2 + s) / (fs2 - s);
    let mut z: Vec<C> = f.z.iter().map(map).collect();
    let p: Vec<C> = f.p.iter().map(map).collect();
    z.resize(p.len(), C::new(-1.0, 0.0));
    let num = f.z.iter().fold(C::new(1.0, 0.0), |acc, z| acc * (fs2 - z));
    let den = f.p.iter().fold(C::new(1.0, 0.0), |acc, p| acc * (fs2 - p));
    Zpk {
        z,
        p,
        k: f.k * (num / den).re,
    }
}

/// Splits roots into conjugate pairs and leftover reals, each as a
/// real quadratic `[1, c1, c2]` (or linear `[1, c1, 0]`).
fn quadratics(roots: &[C]) -> Vec<([f64; 3], f64)> {
    let tol = 1e-9;
    let mut complex: Vec<C> = roots.iter().filter(|r| r.im > tol).copied().collect();
    let mut reals: Vec<f64> = roots
        .iter()
        .filter(|r| r.im.abs() <= tol)
        .map(|r| r.re)
        .collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    reals.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut out: Vec<([f64; 3], f64)> = complex
        .iter()
        .map(|r| ([1.0, -2.0 * r.re, r.norm_sqr()], r.norm()))
        .collect();
    for pair in reals.chunks(2) {
        match *pair {
            [a, b] => out.push(([1.0, -(a + b), a * b], a.abs().max(b.abs()))),
            [a] => out.push(([1.0, -a, 0.0], a.abs())),
            _ => unreachable!(),
        }
    }
    out
}

/// Pole pairs ordered by radius, each matched with the nearest zero pair.
fn zpk_to_sos(f: &Zpk) -> Vec<Sos> {
    let mut poles = quadratics(&f.p);
    poles.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut zeros = quadratics(&f.z);
    let mut sections = Vec::with_capacity(poles.len());
    for (a, _) in poles.iter().rev() {
        // Resonant sections pick first: the zero pair nearest in angle.
        let pole_angle = pole_angle_of(a);
        let b = if zeros.is_empty() {
            [1.0, 0.0, 0.0]
        } else {
            let best = (0..zeros.len())
                .min_by(|&i, &j| {
                    (pole_angle - pole_angle_of(&zeros[i].0))
                        .abs()
                        .total_cmp(&(pole_angle - pole_angle_of(&zeros[j].0)).abs())
                })
                .unwrap();
            zeros.swap_remove(best).0
        };
        sections.push(Sos { b, a: *a });
    }
    sections.reverse();
    if let Some(first) = sections.first_mut() {
        for v in &mut first.b {
            *v *= f.k;
        }
    }
    sections
}

/// Angle of the root of a real quadratic `[1, c1, c2]` in the upper half plane.
fn pole_angle_of(q: &[f64; 3]) -> f64 {
    let disc = q[1] * q[1] - 4.0 * q[2];
    if disc >= 0.0 {
        let r = (-q[1] + disc.sqrt()) / 2.0;
        if r >= 0.0 {
            0.0
        } else {
            PI
        }
    } else {
        (-disc).sqrt().atan2(-q[1])
    }
}

/// Causal cascade filtering, transposed direct form II, zero initial state.
pub fn apply_filter(w: &Waveform, f: &FilterDesign) -> Result<Waveform> {
    if w.sample_rate() != f.sample_rate {
        return Err(Error::Parameter(format!(
            "filter designed at {} Hz applied to a {} Hz signal",
            f.sample_rate,
            w.sample_rate()
        )));
    }
    let mut y = w.samples().to_vec();
    for s in &f.sections {
        let inv = 1.0 / s.a[0];
        let (b0, b1, b2) = (s.b[0] * inv, s.b[1] * inv, s.b[2] * inv);
        let (a1, a2) = (s.a[1] * inv, s.a[2] * inv);
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in &mut y {
            let x = *v;
            let out = b0 * x + z1;
            z1 = b1 * x - a1 * out + z2;
            z2 = b2 * x - a2 * out;
            *v = out;
        }
    }
    Waveform::new(y, w.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms_db(x: &[f64]) -> f64 {
        10.0 * (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).log10()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(design_lowpass(FilterFamily::Butterworth, 4, 8000.0, 16000).is_err());
        assert!(design_lowpass(FilterFamily::Butterworth, 0, 1000.0, 16000).is_err());
        assert!(design_lowpass(FilterFamily::Butterworth, 11, 1000.0, 16000).is_err());
    }

    #[test]
    fn every_design_is_stable_with_sane_dc_gain() {
        for fam in FilterFamily::ALL {
            for order in 1..=10 {
                for cutoff in [500.0, 1000.0, 2000.0, 4000.0] {
                    let f = design_lowpass(fam, order, cutoff, 16000).unwrap();
                    assert!(f.is_stable(), "{fam} {order} {cutoff}");
                    assert_eq!(f.sections.len(), order.div_ceil(2));
                    assert!(
                        f.gain_db(0.0).abs() <= 3.0,
                        "{fam} {order} {cutoff}: {}",
                        f.gain_db(0.0)
                    );
                }
            }
        }
    }

    #[test]
    fn butterworth_dc_gain_is_unity() {
        for order in 1..=10 {
            let f = design_lowpass(FilterFamily::Butterworth, order, 1000.0, 16000).unwrap();
            assert!((f.response(0.0).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn butterworth_order6_octave_attenuation() {
        let f = design_lowpass(FilterFamily::Butterworth, 6, 1000.0, 16000).unwrap();
        assert!(f.gain_db(2000.0) <= -30.0, "{}", f.gain_db(2000.0));
        assert!((f.gain_db(1000.0) + 3.0103).abs() < 1e-3);
    }

    #[test]
    fn elliptic_order8_stopband() {
        let f = design_lowpass(FilterFamily::Elliptic, 8, 1000.0, 16000).unwrap();
        let worst = (0..200)
            .map(|i| f.gain_db(1250.0 + i as f64 * 30.0))
            .fold(f64::MIN, f64::max);
        assert!(worst <= -40.0, "{worst}");
    }

    #[test]
    fn zero_in_zero_out_and_rate_check() {
        let f = design_lowpass(FilterFamily::Chebyshev1, 5, 1000.0, 16000).unwrap();
        let y = apply_filter(&Waveform::zeros(512, 16000), &f).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
        assert!(apply_filter(&Waveform::zeros(16, 22050), &f).is_err());
    }

    #[test]
    fn passband_tone_keeps_level() {
        for fam in FilterFamily::ALL {
            let f = design_lowpass(fam, 6, 1000.0, 16000).unwrap();
            let w = Waveform::tone(250.0, 1.0, 0.0, 16000, 16000);
            let y = apply_filter(&w, &f).unwrap();
            let d = rms_db(&y.samples()[4000..]) - rms_db(&w.samples()[4000..]);
            assert!(d.abs() <= 1.0, "{fam}: {d}");
        }
    }

    #[test]
    fn stopband_tone_is_attenuated() {
        let f = design_lowpass(FilterFamily::Butterworth, 6, 1000.0, 16000).unwrap();
        let w = Waveform::tone(2000.0, 1.0, 0.0, 16000, 16000);
        let y = apply_filter(&w, &f).unwrap();
        assert!(rms_db(&y.samples()[4000..]) <= rms_db(&w.samples()[4000..]) - 30.0);
    }

    #[test]
    fn time_response_matches_frequency_response() {
        // Steady-state gain of a tone equals |H(f)| computed from the sections.
        let f = design_lowpass(FilterFamily::Elliptic, 7, 1000.0, 16000).unwrap();
        let w = Waveform::tone(900.0, 1.0, 0.0, 32000, 16000);
        let y = apply_filter(&w, &f).unwrap();
        let d = rms_db(&y.samples()[16000..]) - rms_db(&w.samples()[16000..]);
        assert!(
            (d - f.gain_db(900.0)).abs() < 0.05,
            "{d} vs {}",
            f.gain_db(900.0)
        );
    }
}
