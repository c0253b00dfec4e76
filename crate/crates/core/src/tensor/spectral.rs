//! Differentiable framed real FFT (STFT) and its overlap-add inverse.
//!
//! Both are linear, so the backward passes are the exact adjoints, again
//! computed with FFTs.

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::{Float, Tensor, Var};

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
            s * s
        })
        .collect()
}

struct Plans<T: Float> {
    fwd: Arc<dyn RealToComplex<T>>,
    inv: Arc<dyn ComplexToReal<T>>,
}

fn plans<T: Float>(n: usize) -> Plans<T> {
    let mut p = RealFftPlanner::<T>::new();
    Plans {
        fwd: p.plan_fft_forward(n),
        inv: p.plan_fft_inverse(n),
    }
}

/// Frame geometry shared by the forward and inverse transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Framing {
    pub n_fft: usize,
    pub hop: usize,
}

impl Framing {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
    pub fn frames(&self, len: usize) -> usize {
        assert!(
            len >= self.n_fft,
            "signal of length {len} shorter than one frame ({})",
            self.n_fft
        );
        (len - self.n_fft) / self.hop + 1
    }
    pub fn span(&self, frames: usize) -> usize {
        (frames - 1) * self.hop + self.n_fft
    }
}

/// Σ_t w²(p - t·hop), the overlap-added squared window.
pub fn window_envelope(window: &[f64], hop: usize, frames: usize) -> Vec<f64> {
    let n = window.len();
    let mut env = vec![0.0; (frames - 1) * hop + n];
    for t in 0..frames {
        for (i, w) in window.iter().enumerate() {
            env[t * hop + i] += w * w;
        }
    }
    env
}

fn rfft_frames<T: Float>(
    x: &[T],
    rows: usize,
    len: usize,
    fr: Framing,
    win: &[T],
    plans: &Plans<T>,
    out: &mut [T],
) {
    let (n, bins) = (fr.n_fft, fr.bins());
    let frames = fr.frames(len);
    let mut buf = plans.fwd.make_input_vec();
    let mut spec = plans.fwd.make_output_vec();
    let plane = rows * bins * frames;
    for r in 0..rows {
        let sig = &x[r * len..(r + 1) * len];
        for t in 0..frames {
            for i in 0..n {
                buf[i] = sig[t * fr.hop + i] * win[i];
            }
            plans.fwd.process(&mut buf, &mut spec).expect("fft size");
            for (k, c) in spec.iter().enumerate() {
                let idx = (r * bins + k) * frames + t;
                out[idx] = c.re;
                out[plane + idx] = c.im;
            }
        }
    }
}

impl<T: Float> Var<T> {
    /// `x [N, L] -> [2, N, bins, frames]` (real plane, imaginary plane).
    /// No padding is applied; frames start at `t * hop`.
    pub fn stft(&self, fr: Framing, window: &[f64]) -> Var<T> {
        let [rows, len] = match *self.shape() {
            [a, b] => [a, b],
            ref s => panic!("stft expects [N, L], got {s:?}"),
        };
        assert_eq!(window.len(), fr.n_fft, "window length must equal n_fft");
        let frames = fr.frames(len);
        let bins = fr.bins();
        let win: Vec<T> = window.iter().map(|&w| T::of(w)).collect();
        let p = plans::<T>(fr.n_fft);
        let mut out = vec![T::zero(); 2 * rows * bins * frames];
        rfft_frames(self.value().data(), rows, len, fr, &win, &p, &mut out);
        let out = Tensor::new(&[2, rows, bins, frames], out);
        Var::from_op(out, &[self], move |g, _| {
            // Adjoint of the one-sided DFT of each windowed frame.
            let n = fr.n_fft;
            let plane = rows * bins * frames;
            let gd = g.data();
            let mut spec = p.inv.make_input_vec();
            let mut buf = p.inv.make_output_vec();
            let mut gx = vec![T::zero(); rows * len];
            let half = T::of(0.5);
            for r in 0..rows {
                for t in 0..frames {
                    for (k, c) in spec.iter_mut().enumerate() {
                        let idx = (r * bins + k) * frames + t;
                        let (re, im) = (gd[idx], gd[plane + idx]);
                        *c = if k == 0 || k == bins - 1 {
                            Complex::new(re, T::zero())
                        } else {
                            Complex::new(re * half, im * half)
                        };
                    }
                    p.inv.process(&mut spec, &mut buf).expect("ifft size");
                    let dst = &mut gx[r * len + t * fr.hop..][..n];
                    for i in 0..n {
                        dst[i] += buf[i] * win[i];
                    }
                }
            }
            vec![Some(Tensor::new(&[rows, len], gx))]
        })
    }

    /// Inverse of [`Var::stft`]: `[2, N, bins, frames] -> [N, span]`,
    /// windowed overlap-add normalised by the squared-window envelope.
    /// Positions with a vanishing envelope are set to zero.
    pub fn istft(&self, fr: Framing, window: &[f64]) -> Var<T> {
        let [two, rows, bins, frames] = match *self.shape() {
            [a, b, c, d] => [a, b, c, d],
            ref s => panic!("istft expects [2, N, bins, frames], got {s:?}"),
        };
        assert_eq!(two, 2, "istft expects real and imaginary planes");
        assert_eq!(bins, fr.bins(), "bin count does not match n_fft");
        let n = fr.n_fft;
        let len = fr.span(frames);
        let env = window_envelope(window, fr.hop, frames);
        let inv_env: Vec<T> = env
            .iter()
            .map(|&e| if e > 1e-10 { T::of(1.0 / e) } else { T::zero() })
            .collect();
        let win: Vec<T> = window.iter().map(|&w| T::of(w)).collect();
        let p = plans::<T>(n);
        let plane = rows * bins * frames;
        let sd = self.value().data();
        let mut out = vec![T::zero(); rows * len];
        let mut spec = p.inv.make_input_vec();
        let mut buf = p.inv.make_output_vec();
        let scale = T::of(1.0 / n as f64);
        for r in 0..rows {
            for t in 0..frames {
                for (k, c) in spec.iter_mut().enumerate() {
                    let idx = (r * bins + k) * frames + t;
                    let im = if k == 0 || k == bins - 1 {
                        T::zero()
                    } else {
                        sd[plane + idx]
                    };
                    *c = Complex::new(sd[idx], im);
                }
                p.inv.process(&mut spec, &mut buf).expect("ifft size");
                let dst = &mut out[r * len + t * fr.hop..][..n];
                for i in 0..n {
                    dst[i] += buf[i] * scale * win[i];
                }
            }
            for (v, &ie) in out[r * len..(r + 1) * len].iter_mut().zip(&inv_env) {
                *v *= ie;
            }
        }
        let out = Tensor::new(&[rows, len], out);
        Var::from_op(out, &[self], move |g, _| {
            let gd = g.data();
            let mut buf = p.fwd.make_input_vec();
            let mut spec = p.fwd.make_output_vec();
            let mut gs = vec![T::zero(); 2 * plane];
            let two = T::of(2.0);
            for r in 0..rows {
                for t in 0..frames {
                    for i in 0..n {
                        let pos = t * fr.hop + i;
                        buf[i] = gd[r * len + pos] * inv_env[pos] * win[i];
                    }
                    p.fwd.process(&mut buf, &mut spec).expect("fft size");
                    for (k, c) in spec.iter().enumerate() {
                        let idx = (r * bins + k) * frames + t;
                        let weight = if k == 0 || k == bins - 1 {
                            scale
                        } else {
                            scale * two
                        };
                        gs[idx] = c.re * weight;
                        gs[plane + idx] = if k == 0 || k == bins - 1 {
                            T::zero()
                        } else {
                            c.im * weight
                        };
                    }
                }
            }
            vec![Some(Tensor::new(&[2, rows, bins, frames], gs))]
        })
    }

    /// `sqrt(re² + im² + eps)` from a `[2, ...]` spectrum.
    pub fn magnitude(&self, eps: f64) -> Var<T> {
        let half = self.dim(0);
        assert_eq!(half, 2, "magnitude expects a [2, ...] spectrum");
        let rest: Vec<usize> = self.shape()[1..].to_vec();
        let re = self.narrow(0, 0, 1);
        let im = self.narrow(0, 1, 1);
        re.square()
            .add(&im.square())
            .add_scalar(eps)
            .sqrt()
            .reshape(&rest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{check_grad, rand_tensor};

    #[test]
    fn stft_matches_direct_dft() {
        let fr = Framing { n_fft: 16, hop: 4 };
        let w = hann_periodic(16);
        let x = rand_tensor(&[1, 40], 1);
        let s = Var::constant(x.clone()).stft(fr, &w);
        let frames = fr.frames(40);
        for t in [0, 3, frames - 1] {
            for k in [0, 1, 5, 8] {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, wi) in w.iter().enumerate() {
                    let th = -2.0 * std::f64::consts::PI * (k * i) as f64 / 16.0;
                    let v = x.data()[t * 4 + i] * wi;
                    re += v * th.cos();
                    im += v * th.sin();
                }
                let got_re = s.value().data()[k * frames + t];
                let got_im = s.value().data()[9 * frames + k * frames + t];
                assert!((re - got_re).abs() < 1e-12 && (im - got_im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn istft_inverts_stft_where_envelope_is_positive() {
        let fr = Framing { n_fft: 32, hop: 8 };
        let w = hann_periodic(32);
        let x = rand_tensor(&[2, 96], 2);
        let y = Var::constant(x.clone()).stft(fr, &w).istft(fr, &w);
        assert_eq!(y.shape(), &[2, 96]);
        for r in 0..2 {
            for i in 1..96 {
                let (a, b) = (x.data()[r * 96 + i], y.value().data()[r * 96 + i]);
                assert!((a - b).abs() < 1e-12, "row {r} sample {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn stft_and_istft_grads() {
        let fr = Framing { n_fft: 8, hop: 2 };
        let w = hann_periodic(8);
        let x = rand_tensor(&[2, 14], 3);
        check_grad(&[x], |_, v| v[0].stft(fr, &w).square().sum_all());
        let s = rand_tensor(&[2, 1, 5, 4], 4);
        let wt = rand_tensor(&[1, 14], 5);
        check_grad(&[s], |_, v| {
            v[0].istft(fr, &w).mul(&Var::constant(wt.clone())).sum_all()
        });
    }

    #[test]
    fn magnitude_grad() {
        let s = rand_tensor(&[2, 3, 4], 6);
        check_grad(&[s], |_, v| v[0].magnitude(1e-9).sum_all());
    }
}
