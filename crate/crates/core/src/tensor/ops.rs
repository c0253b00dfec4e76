//! Elementwise, reduction, shape and matrix operations on [`Var`].

use super::storage::{numel, strides_of};
use super::{gemm, Float, MatRef, Tensor, Var};

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let r = a.len().max(b.len());
    (0..r)
        .map(|i| {
            let da = if i + a.len() >= r {
                a[i + a.len() - r]
            } else {
                1
            };
            let db = if i + b.len() >= r {
                b[i + b.len() - r]
            } else {
                1
            };
            assert!(
                da == db || da == 1 || db == 1,
                "cannot broadcast {a:?} with {b:?}"
            );
            da.max(db)
        })
        .collect()
}

/// Strides of `shape` viewed inside `out` (zero on broadcast axes).
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides_of(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Visits every index of `out`, passing the flat offsets into two operands.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[r - 1];
    let (ia, ib) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r];
    let mut o = 0;
    while o < total {
        let mut base_a = 0;
        let mut base_b = 0;
        for d in 0..r - 1 {
            base_a += idx[d] * sa[d];
            base_b += idx[d] * sb[d];
        }
        for j in 0..inner {
            f(o + j, base_a + j * ia, base_b + j * ib);
        }
        o += inner;
        for d in (0..r - 1).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn zip_broadcast<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape());
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let mut data = vec![T::zero(); numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    Tensor::new(&out, data)
}

/// Sums `g` down to `shape` (inverse of broadcasting).
pub fn reduce_to<T: Float>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let out = g.shape().to_vec();
    let st = aligned_strides(shape, &out);
    let zeros = vec![0; out.len()];
    let mut data = vec![T::zero(); numel(shape)];
    let gd = g.data();
    for_each_broadcast(&out, &st, &zeros, |o, i, _| data[i] += gd[o]);
    Tensor::new(shape, data)
}

macro_rules! unary_op {
    ($(#[$m:meta])* $name:ident, |$x:ident| $fwd:expr, |$xx:ident, $y:ident, $g:ident| $bwd:expr) => {
        $(#[$m])*
        pub fn $name(&self) -> Var<T> {
            let out = self.value().map(|$x| $fwd);
            let xin = self.value_rc();
            let yout = std::rc::Rc::new(out.clone());
            Var::from_op(out, &[self], move |g, _| {
                let xd = xin.data();
                let yd = yout.data();
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &$g)| {
                        let $xx = xd[i];
                        let $y = yd[i];
                        let _ = ($xx, $y);
                        $bwd
                    })
                    .collect();
                vec![Some(Tensor::new(g.shape(), data))]
            })
        }
    };
}

impl<T: Float> Var<T> {
    // ---- binary ------------------------------------------------------------

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let out = zip_broadcast(self.value(), other.value(), |a, b| a + b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Var::from_op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &sa)),
                need[1].then(|| reduce_to(g, &sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let out = zip_broadcast(self.value(), other.value(), |a, b| a - b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Var::from_op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &sa)),
                need[1].then(|| reduce_to(&g.map(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let out = zip_broadcast(self.value(), other.value(), |a, b| a * b);
        let (a, b) = (self.value_rc(), other.value_rc());
        Var::from_op(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(&zip_broadcast(g, &b, |g, b| g * b), a.shape())),
                need[1].then(|| reduce_to(&zip_broadcast(g, &a, |g, a| g * a), b.shape())),
            ]
        })
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let out = zip_broadcast(self.value(), other.value(), |a, b| a / b);
        let (a, b) = (self.value_rc(), other.value_rc());
        Var::from_op(out, &[self, other], move |g, need| {
            let ga = need[0].then(|| reduce_to(&zip_broadcast(g, &b, |g, b| g / b), a.shape()));
            let gb = need[1].then(|| {
                // d(a/b)/db = -a/b^2
                let gab = zip_broadcast(g, &a, |g, a| g * a);
                reduce_to(&zip_broadcast(&gab, &b, |ga, b| -ga / (b * b)), b.shape())
            });
            vec![ga, gb]
        })
    }

    // ---- scalar ------------------------------------------------------------

    pub fn add_scalar(&self, s: f64) -> Var<T> {
        let s = T::of(s);
        let out = self.value().map(|v| v + s);
        Var::from_op(out, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn mul_scalar(&self, s: f64) -> Var<T> {
        let s = T::of(s);
        let out = self.value().map(|v| v * s);
        Var::from_op(out, &[self], move |g, _| vec![Some(g.map(|v| v * s))])
    }

    pub fn neg(&self) -> Var<T> {
        self.mul_scalar(-1.0)
    }

    // ---- unary -------------------------------------------------------------

    unary_op!(square, |x| x * x, |x, _y, g| g * (x + x));
    unary_op!(
        /// Natural exponential.
        exp, |x| x.exp(), |_x, y, g| g * y);
    unary_op!(ln, |x| x.ln(), |x, _y, g| g / x);
    unary_op!(sqrt, |x| x.sqrt(), |_x, y, g| g / (y + y));
    unary_op!(tanh, |x| x.tanh(), |_x, y, g| g * (T::one() - y * y));
    unary_op!(abs, |x| x.abs(), |x, _y, g| if x > T::zero() {
        g
    } else if x < T::zero() {
        -g
    } else {
        T::zero()
    });
    unary_op!(
        /// `ln(1 + e^x)`, computed without overflow.
        softplus,
        |x| if x > T::of(20.0) { x } else { x.exp().ln_1p() },
        |x, _y, g| g / (T::one() + (-x).exp())
    );
    unary_op!(
        sigmoid,
        |x| T::one() / (T::one() + (-x).exp()),
        |_x, y, g| g * y * (T::one() - y)
    );

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::of(slope);
        let out = self.value().map(|x| if x >= T::zero() { x } else { x * s });
        let xin = self.value_rc();
        Var::from_op(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&xin, |g, x| {
                if x >= T::zero() {
                    g
                } else {
                    g * s
                }
            }))]
        })
    }

    /// `max(x, floor)`; gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Var<T> {
        let f = T::of(floor);
        let out = self.value().map(|x| x.max(f));
        let xin = self.value_rc();
        Var::from_op(out, &[self], move |g, _| {
            vec![Some(
                g.zip_map(&xin, |g, x| if x >= f { g } else { T::zero() }),
            )]
        })
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum_all(&self) -> Var<T> {
        let out = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(out, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = self.value().len().max(1);
        self.sum_all().mul_scalar(1.0 / n as f64)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes_keep(&self, axes: &[usize]) -> Var<T> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        let out = reduce_to(self.value(), &shape);
        let in_shape = self.shape().to_vec();
        Var::from_op(out, &[self], move |g, _| {
            let zeros = Tensor::zeros(&in_shape);
            vec![Some(zip_broadcast(&zeros, g, |_, g| g))]
        })
    }

    // ---- shape -------------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let out = self.value().clone().reshaped(shape);
        let in_shape = self.shape().to_vec();
        Var::from_op(out, &[self], move |g, _| {
            vec![Some(g.clone().reshaped(&in_shape))]
        })
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        let out = self.value().narrow(axis, start, len);
        let in_shape = self.shape().to_vec();
        Var::from_op(out, &[self], move |g, _| {
            let outer: usize = in_shape[..axis].iter().product();
            let inner: usize = in_shape[axis + 1..].iter().product();
            let n = in_shape[axis];
            let mut full = Tensor::zeros(&in_shape);
            let fd = full.data_mut();
            let gd = g.data();
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                let src = o * len * inner;
                fd[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
            }
            vec![Some(full)]
        })
    }

    pub fn concat(parts: &[&Var<T>], axis: usize) -> Var<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let base = parts[0].shape().to_vec();
        for p in parts {
            assert_eq!(p.shape().len(), base.len(), "concat rank mismatch");
            for (d, (&a, &b)) in p.shape().iter().zip(&base).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch on axis {d}");
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = sizes.iter().sum();
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for (p, &n) in parts.iter().zip(&sizes) {
                let src = &p.value().data()[o * n * inner..(o + 1) * n * inner];
                data.extend_from_slice(src);
            }
        }
        let out = Tensor::new(&shape, data);
        Var::from_op(out, parts, move |g, need| {
            let mut off = 0;
            sizes
                .iter()
                .zip(need)
                .map(|(&n, &nd)| {
                    let r = nd.then(|| g.narrow(axis, off, n));
                    off += n;
                    r
                })
                .collect()
        })
    }

    /// Pads `axis` with `before`/`after` entries.
    pub fn pad(&self, axis: usize, before: usize, after: usize, mode: PadMode) -> Var<T> {
        let shape = self.shape().to_vec();
        let n = shape[axis];
        if let PadMode::Reflect = mode {
            assert!(
                before < n && after < n,
                "reflect pad larger than input ({before}, {after}) vs {n}"
            );
        }
        let m = n + before + after;
        // Source index for each padded position (None = constant).
        let src: Vec<Option<usize>> = (0..m)
            .map(|i| {
                let p = i as isize - before as isize;
                match mode {
                    PadMode::Constant(_) => (p >= 0 && (p as usize) < n).then_some(p as usize),
                    PadMode::Reflect => {
                        let q = if p < 0 {
                            -p
                        } else if p as usize >= n {
                            2 * (n as isize - 1) - p
                        } else {
                            p
                        };
                        Some(q as usize)
                    }
                }
            })
            .collect();
        let fill = match mode {
            PadMode::Constant(v) => T::of(v),
            PadMode::Reflect => T::zero(),
        };
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = m;
        let xd = self.value().data();
        let mut data = vec![fill; outer * m * inner];
        for o in 0..outer {
            for (i, s) in src.iter().enumerate() {
                if let Some(s) = s {
                    let dst = (o * m + i) * inner;
                    let from = (o * n + s) * inner;
                    data[dst..dst + inner].copy_from_slice(&xd[from..from + inner]);
                }
            }
        }
        let out = Tensor::new(&out_shape, data);
        Var::from_op(out, &[self], move |g, _| {
            let mut gx = Tensor::zeros(&shape);
            let gxd = gx.data_mut();
            let gd = g.data();
            for o in 0..outer {
                for (i, s) in src.iter().enumerate() {
                    if let Some(s) = s {
                        let from = (o * m + i) * inner;
                        let dst = (o * n + s) * inner;
                        for j in 0..inner {
                            gxd[dst + j] += gd[from + j];
                        }
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    // ---- matrix ------------------------------------------------------------

    /// `self [M, K] x rhs [K, N] -> [M, N]`, or `self [M, K] x rhs [B, K, N]
    /// -> [B, M, N]` with the left operand shared across the batch.
    pub fn matmul(&self, rhs: &Var<T>) -> Var<T> {
        assert_eq!(self.shape().len(), 2, "matmul lhs must be 2-d");
        let (m, k) = (self.dim(0), self.dim(1));
        let (batch, k2, n, out_shape) = match rhs.shape() {
            [k2, n] => (1, *k2, *n, vec![m, *n]),
            [b, k2, n] => (*b, *k2, *n, vec![*b, m, *n]),
            s => panic!("matmul rhs must be 2-d or 3-d, got {s:?}"),
        };
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let (a, b) = (self.value_rc(), rhs.value_rc());
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            gemm(
                m,
                k,
                n,
                T::one(),
                MatRef::new(a.data(), k),
                MatRef::new(&b.data()[bi * k * n..], n),
                T::zero(),
                &mut out[bi * m * n..],
                n,
            );
        }
        let out = Tensor::new(&out_shape, out);
        Var::from_op(out, &[self, rhs], move |g, need| {
            let gd = g.data();
            let ga = need[0].then(|| {
                let mut ga = vec![T::zero(); m * k];
                for bi in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        MatRef::new(&gd[bi * m * n..], n),
                        MatRef::t(&b.data()[bi * k * n..], n),
                        T::one(),
                        &mut ga,
                        k,
                    );
                }
                Tensor::new(&[m, k], ga)
            });
            let gb = need[1].then(|| {
                let mut gb = vec![T::zero(); batch * k * n];
                for bi in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        MatRef::t(a.data(), k),
                        MatRef::new(&gd[bi * m * n..], n),
                        T::zero(),
                        &mut gb[bi * k * n..],
                        n,
                    );
                }
                Tensor::new(b.shape(), gb)
            });
            vec![ga, gb]
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PadMode {
    Constant(f64),
    Reflect,
}
