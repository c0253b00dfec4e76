//! Least-squares adversarial, feature-matching and log-mel objectives.
//!
//! Expectations are batch means and L1 norms are divided by element count,
//! so every loss is invariant to batch size.

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::LogMel;
use crate::tensor::{Float, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_fm: 2.0,
            lambda_mel: 45.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fm >= 0.0
            && self.lambda_mel >= 0.0
            && self.lambda_fm.is_finite()
            && self.lambda_mel.is_finite())
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got fm={} mel={}",
                self.lambda_fm, self.lambda_mel
            )));
        }
        Ok(())
    }
}

/// `mean((d_real − 1)²) + mean(d_fake²)` for one discriminator.
pub fn lsgan_d_loss<T: Float>(d_real: &Var<T>, d_fake: &Var<T>) -> Var<T> {
    d_real
        .add_scalar(-1.0)
        .square()
        .mean_all()
        .add(&d_fake.square().mean_all())
}

/// `Σ_i mean((d_fake_i − 1)²)` over the discriminators.
pub fn lsgan_g_loss<T: Float>(d_fake: &[Var<T>]) -> Var<T> {
    sum(d_fake
        .iter()
        .map(|s| s.add_scalar(-1.0).square().mean_all()))
}

/// `Σ_i Σ_j mean|D_i^j(y) − D_i^j(ŷ)|` over discriminators `i` and hidden
/// layers `j`.
pub fn feature_matching_loss<T: Float>(
    real: &[Vec<Var<T>>],
    fake: &[Vec<Var<T>>],
) -> Result<Var<T>> {
    if real.len() != fake.len() {
        return Err(Error::Shape(format!(
            "{} real vs {} fake feature sets",
            real.len(),
            fake.len()
        )));
    }
    let mut terms = Vec::new();
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.len() != f.len() {
            return Err(Error::Shape(format!(
                "discriminator {i}: {} real vs {} fake layers",
                r.len(),
                f.len()
            )));
        }
        for (j, (a, b)) in r.iter().zip(f).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "discriminator {i} layer {j}: shapes {:?} and {:?} differ",
                    a.shape(),
                    b.shape()
                )));
            }
            terms.push(a.sub(b).abs().mean_all());
        }
    }
    Ok(sum(terms.into_iter()))
}

/// `mean|φ(y) − φ(ŷ)|` over batch, mel bands and frames.
pub fn mel_loss<T: Float>(mel: &LogMel, y: &Var<T>, y_hat: &Var<T>) -> Var<T> {
    mel.forward(y).sub(&mel.forward(y_hat)).abs().mean_all()
}

/// [`mel_loss`] on two waveforms.
pub fn mel_loss_waveforms(mel: &LogMel, y: &Waveform, y_hat: &Waveform) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Length(format!(
            "waveforms of length {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.sample_rate() != mel.sample_rate() || y_hat.sample_rate() != mel.sample_rate() {
        return Err(Error::Parameter(format!(
            "mel front end runs at {} Hz",
            mel.sample_rate()
        )));
    }
    let v = |w: &Waveform| Var::<f64>::constant(Tensor::from_f64(&[1, w.len()], w.samples()));
    Ok(mel_loss(mel, &v(y), &v(y_hat)).value().item())
}

/// `adv + λ_fm · fm + λ_mel · mel`.
pub fn generator_total_loss<T: Float>(
    adv: &Var<T>,
    fm: &Var<T>,
    mel: &Var<T>,
    w: &LossWeights,
) -> Var<T> {
    adv.add(&fm.mul_scalar(w.lambda_fm))
        .add(&mel.mul_scalar(w.lambda_mel))
}

fn sum<T: Float>(mut it: impl Iterator<Item = Var<T>>) -> Var<T> {
    let first = it
        .next()
        .unwrap_or_else(|| Var::constant(Tensor::scalar(T::zero())));
    it.fold(first, |a, b| a.add(&b))
}
