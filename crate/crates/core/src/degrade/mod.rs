//! Band-limiting and additive-noise degradations that turn clean targets
//! `y` into model inputs `x`.

mod analog;
mod filter;

use std::fmt;

use rand::Rng;
use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

pub use filter::{
    apply_filter, design_lowpass, FilterDesign, FilterFamily, Sos, CHEBYSHEV_RIPPLE_DB,
    ELLIPTIC_RIPPLE_DB, ELLIPTIC_STOPBAND_DB,
};

use crate::audio::{resample, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Bwe,
    Se,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Bwe => "bwe",
            Task::Se => "se",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bwe" => Some(Task::Bwe),
            "se" => Some(Task::Se),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of the transform `x = f(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub task: Task,
    /// Band-limited rate `s`; the low-pass cutoff is `s / 2`.
    pub source_rate: u32,
    /// Rate `S` of targets and model inputs.
    pub target_rate: u32,
    pub families: Vec<FilterFamily>,
    /// Inclusive order interval.
    pub order_range: (usize, usize),
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// Maximum lag searched when re-aligning the degraded signal.
    pub max_align_lag: usize,
}

impl DegradationSpec {
    pub fn bwe(source_rate: u32, target_rate: u32, seed: u64) -> Self {
        Self {
            task: Task::Bwe,
            source_rate,
            target_rate,
            families: FilterFamily::ALL.to_vec(),
            order_range: (2, 10),
            snr_db: None,
            seed,
            max_align_lag: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.task {
            Task::Bwe => {
                if self.source_rate == 0 || self.source_rate >= self.target_rate {
                    return Err(Error::Parameter(format!(
                        "bandwidth extension needs 0 < s < S, got s={} S={}",
                        self.source_rate, self.target_rate
                    )));
                }
                if self.families.is_empty() {
                    return Err(Error::Parameter("no filter families to draw from".into()));
                }
                let (lo, hi) = self.order_range;
                if !(1 <= lo && lo <= hi && hi <= 10) {
                    return Err(Error::Parameter(format!(
                        "order range [{lo}, {hi}] must lie within [1, 10]"
                    )));
                }
            }
            Task::Se => {
                if !self.snr_db.is_some_and(f64::is_finite) {
                    return Err(Error::Parameter(
                        "speech enhancement needs a finite snr_db".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn cutoff(&self) -> f64 {
        self.source_rate as f64 / 2.0
    }

    /// Draws the filter family and order for one degradation.
    pub fn draw_filter(&self, rng: &mut impl Rng) -> (FilterFamily, usize) {
        let family = self.families[rng.random_range(0..self.families.len())];
        let order = rng.random_range(self.order_range.0..=self.order_range.1);
        (family, order)
    }
}

/// Record of what one BWE degradation did.
#[derive(Clone, Debug, PartialEq)]
pub struct BweTrace {
    pub family: FilterFamily,
    pub order: usize,
    /// Delay removed during alignment, in samples (positive = output lagged).
    pub lag: isize,
}

/// `Resample(lowpass(y, s/2), s, S)` with a randomly drawn filter, then
/// shifted to best match `y`.
pub fn degrade_bwe(y: &Waveform, spec: &DegradationSpec, rng: &mut impl Rng) -> Result<Waveform> {
    Ok(degrade_bwe_traced(y, spec, rng)?.0)
}

pub fn degrade_bwe_traced(
    y: &Waveform,
    spec: &DegradationSpec,
    rng: &mut impl Rng,
) -> Result<(Waveform, BweTrace)> {
    spec.validate()?;
    if spec.task != Task::Bwe {
        return Err(Error::Parameter(
            "degrade_bwe called with a speech-enhancement spec".into(),
        ));
    }
    let (family, order) = spec.draw_filter(rng);
    degrade_bwe_with(y, spec, family, order)
}

/// Deterministic core of [`degrade_bwe`] for a fixed filter.
pub fn degrade_bwe_with(
    y: &Waveform,
    spec: &DegradationSpec,
    family: FilterFamily,
    order: usize,
) -> Result<(Waveform, BweTrace)> {
    if y.sample_rate() != spec.target_rate {
        return Err(Error::Parameter(format!(
            "target is {} Hz, spec expects {} Hz",
            y.sample_rate(),
            spec.target_rate
        )));
    }
    let filt = design_lowpass(family, order, spec.cutoff(), spec.target_rate)?;
    let low = apply_filter(y, &filt)?;
    let down = resample(&low, spec.source_rate)?;
    let mut up = resample(&down, spec.target_rate)?.into_samples();
    up.resize(y.len(), 0.0);
    let lag = best_lag(&up, y.samples(), spec.max_align_lag);
    let aligned = shift(&up, lag);
    Ok((
        Waveform::new(aligned, y.sample_rate())?,
        BweTrace { family, order, lag },
    ))
}

/// Lag `l` in `[-max_lag, max_lag]` maximising `Σ x[n + l] · r[n]`.
pub fn best_lag(x: &[f64], r: &[f64], max_lag: usize) -> isize {
    let n = x.len().max(r.len());
    if n == 0 {
        return 0;
    }
    let size = (2 * n).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let spectrum = |v: &[f64]| {
        let mut buf = fwd.make_input_vec();
        buf[..v.len()].copy_from_slice(v);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft size");
        out
    };
    let (fx, fr) = (spectrum(x), spectrum(r));
    let mut prod: Vec<Complex64> = fx.iter().zip(&fr).map(|(a, b)| a * b.conj()).collect();
    prod[0].im = 0.0;
    let last = prod.len() - 1;
    prod[last].im = 0.0;
    let mut corr = inv.make_output_vec();
    inv.process(&mut prod, &mut corr).expect("ifft size");
    let max_lag = max_lag.min(n - 1) as isize;
    let at = |l: isize| {
        if l >= 0 {
            corr[l as usize]
        } else {
            corr[(size as isize + l) as usize]
        }
    };
    let mut best = 0;
    for l in -max_lag..=max_lag {
        if at(l) > at(best) {
            best = l;
        }
    }
    best
}

/// `out[i] = x[i + lag]`, zero outside the source.
fn shift(x: &[f64], lag: isize) -> Vec<f64> {
    (0..x.len() as isize)
        .map(|i| {
            x.get((i + lag) as usize)
                .copied()
                .filter(|_| i + lag >= 0)
                .unwrap_or(0.0)
        })
        .collect()
}

/// `y + g·n` with `g` chosen so that `‖y‖² / ‖g·n‖²` equals `snr_db`.
pub fn mix_at_snr(y: &Waveform, n: &Waveform, snr_db: f64) -> Result<Waveform> {
    if y.len() != n.len() || y.sample_rate() != n.sample_rate() {
        return Err(Error::Length(format!(
            "signal ({} @ {} Hz) and noise ({} @ {} Hz) differ",
            y.len(),
            y.sample_rate(),
            n.len(),
            n.sample_rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Parameter(format!(
            "snr_db must be finite, got {snr_db}"
        )));
    }
    let (ny, nn) = (y.norm(), n.norm());
    if ny == 0.0 || nn == 0.0 {
        return Err(Error::Degenerate(
            "signal and noise must both be non-silent".into(),
        ));
    }
    let g = ny / (nn * 10f64.powf(snr_db / 20.0));
    Waveform::new(
        y.samples()
            .iter()
            .zip(n.samples())
            .map(|(a, b)| a + g * b)
            .collect(),
        y.sample_rate(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64, rate: u32) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn best_lag_finds_known_shift() {
        let r = noise(2000, 1, 16000).into_samples();
        for lag in [-17isize, 0, 5, 300] {
            let x = shift(&r, -lag);
            assert_eq!(best_lag(&x, &r, 1024), lag);
        }
    }

    #[test]
    fn bwe_preserves_length_and_rate() {
        let y = noise(32000, 2, 16000);
        let spec = DegradationSpec::bwe(2000, 16000, 0);
        let x = degrade_bwe(&y, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!((x.len(), x.sample_rate()), (32000, 16000));
    }

    #[test]
    fn bwe_is_deterministic_for_a_seed() {
        let y = noise(8000, 4, 16000);
        let spec = DegradationSpec::bwe(4000, 16000, 0);
        let a = degrade_bwe(&y, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = degrade_bwe(&y, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn draws_cover_the_declared_ranges() {
        let spec = DegradationSpec::bwe(2000, 16000, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<_> = (0..400).map(|_| spec.draw_filter(&mut rng)).collect();
        for fam in FilterFamily::ALL {
            assert!(draws.iter().any(|d| d.0 == fam));
        }
        assert!(draws.iter().all(|d| (2..=10).contains(&d.1)));
        assert!(draws.iter().any(|d| d.1 == 2) && draws.iter().any(|d| d.1 == 10));
    }

    #[test]
    fn spec_validation() {
        assert!(DegradationSpec::bwe(16000, 16000, 0).validate().is_err());
        let mut s = DegradationSpec::bwe(2000, 16000, 0);
        s.order_range = (0, 3);
        assert!(s.validate().is_err());
        s.task = Task::Se;
        assert!(s.validate().is_err());
        s.snr_db = Some(5.0);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn mix_formula() {
        let y = Waveform::new(vec![1.0, 0.0], 16000).unwrap();
        let n = Waveform::new(vec![0.0, 1.0], 16000).unwrap();
        assert_eq!(mix_at_snr(&y, &n, 0.0).unwrap().samples(), &[1.0, 1.0]);
        let m = mix_at_snr(&y, &n, 20.0).unwrap();
        assert!((m.samples()[1] - 0.1).abs() < 1e-15);
        assert!(matches!(
            mix_at_snr(&y, &Waveform::zeros(2, 16000), 0.0),
            Err(Error::Degenerate(_))
        ));
    }
}
