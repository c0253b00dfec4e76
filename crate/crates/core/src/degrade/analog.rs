//! Normalised analog low-pass prototypes (passband edge 1 rad/s) as
//! zeros, poles and gain.

use std::f64::consts::PI;

use realfft::num_complex::Complex64 as C;

#[derive(Clone, Debug)]
pub(crate) struct Zpk {
    pub z: Vec<C>,
    pub p: Vec<C>,
    pub k: f64,
}

fn pow10m1(x: f64) -> f64 {
    (x * std::f64::consts::LN_10).exp_m1()
}

fn prod_neg(v: &[C]) -> C {
    v.iter().fold(C::new(1.0, 0.0), |acc, &x| acc * -x)
}

pub(crate) fn butterworth(n: usize) -> Zpk {
    let p = (0..n)
        .map(|k| {
            let th = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            C::from_polar(1.0, th)
        })
        .collect();
    Zpk {
        z: vec![],
        p,
        k: 1.0,
    }
}

/// Equiripple passband of `rp` dB.
pub(crate) fn chebyshev1(n: usize, rp: f64) -> Zpk {
    let eps = pow10m1(0.1 * rp).sqrt();
    let mu = (1.0 / eps).asinh() / n as f64;
    let p: Vec<C> = (0..n)
        .map(|i| {
            let m = 2.0 * i as f64 - n as f64 + 1.0;
            let th = PI * m / (2 * n) as f64;
            -C::new(mu, th).sinh()
        })
        .collect();
    let mut k = prod_neg(&p).re;
    if n.is_multiple_of(2) {
        k /= (1.0 + eps * eps).sqrt();
    }
    Zpk { z: vec![], p, k }
}

/// Unit-DC-gain Bessel filter whose magnitude falls by 3 dB at 1 rad/s.
pub(crate) fn bessel(n: usize) -> Zpk {
    // Reverse Bessel polynomial, ascending powers: a_k = (2n-k)! / (2^(n-k) k! (n-k)!).
    let coef: Vec<f64> = (0..=n)
        .map(|k| {
            let mut v = 1.0;
            for i in (n - k + 1)..=(2 * n - k) {
                v *= i as f64;
            }
            for i in 1..=k {
                v /= i as f64;
            }
            v / 2f64.powi((n - k) as i32)
        })
        .collect();
    let p = poly_roots(&coef);
    let mag2 = |w: f64| {
        let s = C::new(0.0, w);
        let den = coef
            .iter()
            .rev()
            .fold(C::new(0.0, 0.0), |acc, &c| acc * s + c);
        (coef[0] * coef[0]) / den.norm_sqr()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while mag2(hi) > 0.5 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mag2(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w3 = 0.5 * (lo + hi);
    let p: Vec<C> = p.into_iter().map(|r| r / w3).collect();
    let k = prod_neg(&p).re;
    Zpk { z: vec![], p, k }
}

/// Roots of `Σ coef[i] sᶦ` by Aberth–Ehrlich iteration.
fn poly_roots(coef: &[f64]) -> Vec<C> {
    let n = coef.len() - 1;
    let lead = coef[n];
    let a: Vec<f64> = coef.iter().map(|c| c / lead).collect();
    let eval = |s: C| {
        let mut f = C::new(0.0, 0.0);
        let mut df = C::new(0.0, 0.0);
        for &c in a.iter().rev() {
            df = df * s + f;
            f = f * s + c;
        }
        (f, df)
    };
    // Start on a circle of the Cauchy-bound radius, off the real axis.
    let radius = a[0].abs().powf(1.0 / n as f64).max(1.0);
    let mut z: Vec<C> = (0..n)
        .map(|i| C::from_polar(radius, 2.0 * PI * (i as f64 + 0.25) / n as f64))
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let (f, df) = eval(z[i]);
            if f.norm() == 0.0 {
                continue;
            }
            let ratio = f / df;
            let rep: C = (0..n)
                .filter(|&j| j != i)
                .map(|j| C::new(1.0, 0.0) / (z[i] - z[j]))
                .sum();
            let step = ratio / (C::new(1.0, 0.0) - ratio * rep);
            z[i] -= step;
            moved = moved.max(step.norm() / z[i].norm().max(1e-300));
        }
        if moved < 1e-15 {
            break;
        }
    }
    // Conjugate symmetry is exact for real polynomials; enforce it.
    for r in &mut z {
        if r.im.abs() < 1e-12 * r.norm() {
            r.im = 0.0;
        }
    }
    z
}

/// Complete elliptic integral K(m) via the arithmetic-geometric mean.
fn ellipk(m: f64) -> f64 {
    PI / (2.0 * agm(1.0, (1.0 - m).sqrt()))
}

/// K(1 - p), accurate for small `p`.
fn ellipkm1(p: f64) -> f64 {
    PI / (2.0 * agm(1.0, p.sqrt()))
}

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let t = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = t;
    }
    a
}

/// Jacobi elliptic functions (sn, cn, dn) by descending Landen transformation.
fn ellipj(u: f64, m: f64) -> (f64, f64, f64) {
    if m < 1e-12 {
        return (u.sin(), u.cos(), 1.0);
    }
    let mut a = vec![1.0];
    let mut c = vec![m.sqrt()];
    let mut b = (1.0 - m).sqrt();
    while (c.last().unwrap() / a.last().unwrap()).abs() > 1e-16 && a.len() < 16 {
        let ai = *a.last().unwrap();
        c.push(0.5 * (ai - b));
        let t = (ai * b).sqrt();
        a.push(0.5 * (ai + b));
        b = t;
    }
    let mut i = a.len() - 1;
    let mut phi = 2f64.powi(i as i32) * a[i] * u;
    let mut prev = phi;
    while i > 0 {
        let t = c[i] * phi.sin() / a[i];
        prev = phi;
        phi = 0.5 * (t.asin() + phi);
        i -= 1;
    }
    let (sn, cn) = phi.sin_cos();
    (sn, cn, cn / (phi - prev).cos())
}

/// Solves the degree equation for the selectivity parameter.
fn ellipdeg(n: usize, m1: f64) -> f64 {
    let q1 = (-PI * ellipkm1(m1) / ellipk(m1)).exp();
    let q = q1.powf(1.0 / n as f64);
    let num: f64 = (0..=7).map(|i| q.powi(i * (i + 1))).sum();
    let den: f64 = 1.0 + 2.0 * (1..=8).map(|i| q.powi(i * i)).sum::<f64>();
    16.0 * q * (num / den).powi(4)
}

/// Inverse of sn for complex argument by Landen descent.
fn arc_jac_sn(w: C, m: f64) -> C {
    let complement = |kx: C| ((C::new(1.0, 0.0) - kx) * (C::new(1.0, 0.0) + kx)).sqrt();
    let k = m.sqrt();
    let mut ks = vec![k];
    while *ks.last().unwrap() != 0.0 && ks.len() < 12 {
        let kp = (1.0 - ks.last().unwrap().powi(2)).sqrt();
        ks.push((1.0 - kp) / (1.0 + kp));
    }
    let big_k: f64 = ks[1..].iter().map(|k| 1.0 + k).product::<f64>() * PI / 2.0;
    let mut wn = w;
    for win in ks.windows(2) {
        let (kn, knext) = (win[0], win[1]);
        wn = 2.0 * wn / ((1.0 + knext) * (C::new(1.0, 0.0) + complement(wn * kn)));
    }
    big_k * (2.0 / PI) * wn.asin()
}

/// Equiripple passband of `rp` dB and stopband at least `rs` dB down.
pub(crate) fn elliptic(n: usize, rp: f64, rs: f64) -> Zpk {
    if n == 1 {
        let p = -(1.0 / pow10m1(0.1 * rp)).sqrt();
        return Zpk {
            z: vec![],
            p: vec![C::new(p, 0.0)],
            k: -p,
        };
    }
    let eps_sq = pow10m1(0.1 * rp);
    let eps = eps_sq.sqrt();
    let ck1_sq = eps_sq / pow10m1(0.1 * rs);
    let k1 = ellipk(ck1_sq);
    let m = ellipdeg(n, ck1_sq);
    let capk = ellipk(m);
    let js: Vec<usize> = ((1 - n % 2)..n).step_by(2).collect();
    let sncndn: Vec<(f64, f64, f64)> = js
        .iter()
        .map(|&j| ellipj(j as f64 * capk / n as f64, m))
        .collect();
    let mut z: Vec<C> = sncndn
        .iter()
        .filter(|(s, _, _)| s.abs() > 1e-16)
        .map(|(s, _, _)| C::new(0.0, 1.0 / (m.sqrt() * s)))
        .collect();
    let conj: Vec<C> = z.iter().map(|v| v.conj()).collect();
    z.extend(conj);
    let r = arc_jac_sn(C::new(0.0, 1.0 / eps), ck1_sq).im;
    let v0 = capk * r / (n as f64 * k1);
    let (sv, cv, dv) = ellipj(v0, 1.0 - m);
    let mut p: Vec<C> = sncndn
        .iter()
        .map(|&(s, c, d)| -C::new(c * d * sv * cv, s * dv) / (1.0 - (d * sv).powi(2)))
        .collect();
    let extra: Vec<C> = if n % 2 == 1 {
        let scale: f64 = p.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        p.iter()
            .filter(|v| v.im.abs() > 1e-16 * scale)
            .map(|v| v.conj())
            .collect()
    } else {
        p.iter().map(|v| v.conj()).collect()
    };
    p.extend(extra);
    let mut k = (prod_neg(&p) / prod_neg(&z)).re;
    if n.is_multiple_of(2) {
        k /= (1.0 + eps_sq).sqrt();
    }
    Zpk { z, p, k }
}

impl Zpk {
    /// Analog frequency response at `w` rad/s.
    #[cfg(test)]
    pub fn response(&self, w: f64) -> C {
        let s = C::new(0.0, w);
        let num = self
            .z
            .iter()
            .fold(C::new(self.k, 0.0), |acc, &z| acc * (s - z));
        let den = self
            .p
            .iter()
            .fold(C::new(1.0, 0.0), |acc, &p| acc * (s - p));
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    #[test]
    fn all_poles_in_left_half_plane() {
        for n in 1..=10 {
            for f in [
                butterworth(n),
                chebyshev1(n, 1.0),
                bessel(n),
                elliptic(n, 1.0, 60.0),
            ] {
                assert_eq!(f.p.len(), n);
                assert!(f.p.iter().all(|p| p.re < 0.0), "order {n}: {:?}", f.p);
            }
        }
    }

    #[test]
    fn butterworth_is_3db_at_edge() {
        for n in 1..=10 {
            assert!((db(butterworth(n).response(1.0).norm()) + 3.0103).abs() < 1e-3);
        }
    }

    #[test]
    fn bessel_is_3db_at_edge_and_unit_at_dc() {
        for n in 1..=10 {
            let f = bessel(n);
            assert!((f.response(0.0).norm() - 1.0).abs() < 1e-9);
            assert!(
                (f.response(1.0).norm() - 0.5f64.sqrt()).abs() < 1e-9,
                "order {n}"
            );
        }
    }

    #[test]
    fn bessel_roots_solve_the_polynomial() {
        // θ₃(s) = s³ + 6s² + 15s + 15.
        let r = poly_roots(&[15.0, 15.0, 6.0, 1.0]);
        for s in r {
            let v = s * s * s + 6.0 * s * s + 15.0 * s + 15.0;
            assert!(v.norm() < 1e-10);
        }
    }

    #[test]
    fn chebyshev_ripple_is_one_db() {
        for n in 2..=8 {
            let f = chebyshev1(n, 1.0);
            let worst = (0..=1000)
                .map(|i| db(f.response(i as f64 / 1000.0).norm()))
                .fold(0.0, f64::min);
            assert!(worst > -1.0 - 1e-6 && worst < -0.99, "order {n}: {worst}");
        }
    }

    #[test]
    fn elliptic_meets_ripple_and_stopband() {
        for n in 2..=8 {
            let f = elliptic(n, 1.0, 60.0);
            let pass = (0..=1000)
                .map(|i| db(f.response(i as f64 / 1000.0).norm()))
                .fold(0.0, f64::min);
            assert!(pass > -1.0 - 1e-6, "order {n} passband {pass}");
            // Stopband edge from the degree equation: ws = 1/sqrt(m).
            let ws = 1.0 / ellipdeg(n, pow10m1(0.1) / pow10m1(6.0)).sqrt();
            let stop = (0..=2000)
                .map(|i| db(f.response(ws * (1.0 + i as f64 / 100.0)).norm()))
                .fold(-1e9, f64::max);
            assert!(stop < -60.0 + 1e-6, "order {n} stopband {stop}");
        }
    }

    #[test]
    fn elliptic_functions_match_identities() {
        for &(u, m) in &[(0.3, 0.5), (1.2, 0.9), (0.7, 0.01), (2.0, 0.999)] {
            let (sn, cn, dn) = ellipj(u, m);
            assert!((sn * sn + cn * cn - 1.0).abs() < 1e-12);
            assert!((dn * dn + m * sn * sn - 1.0).abs() < 1e-12);
        }
        // K(0) = π/2, K(0.5) from tables.
        assert!((ellipk(0.0) - PI / 2.0).abs() < 1e-15);
        assert!((ellipk(0.5) - 1.854_074_677_301_372).abs() < 1e-13);
    }
}
