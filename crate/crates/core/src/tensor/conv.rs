//! Convolutions lowered to GEMM via im2col / col2im.
//!
//! Everything is expressed as 2-d convolution over `[B, C, H, W]`; 1-d
//! convolutions run with `H = 1`.

use super::{gemm, Float, MatRef, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub dilation: [usize; 2],
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: [1, 1],
            padding: [0, 0],
            dilation: [1, 1],
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn conv1d(stride: usize, padding: usize, dilation: usize, groups: usize) -> Self {
        Self {
            stride: [1, stride],
            padding: [0, padding],
            dilation: [1, dilation],
            groups,
        }
    }

    pub fn out_len(&self, axis: usize, len: usize, kernel: usize) -> usize {
        let span = self.dilation[axis] * (kernel - 1) + 1;
        let padded = len + 2 * self.padding[axis];
        assert!(
            padded >= span,
            "convolution input too short: {len} (+2x{}) < {span}",
            self.padding[axis]
        );
        (padded - span) / self.stride[axis] + 1
    }
}

/// Geometry of one image/column pair: `c x h x w` image, `c*kh*kw x oh*ow`
/// column matrix.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    s: [usize; 2],
    p: [usize; 2],
    d: [usize; 2],
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }
    fn is_identity(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.s == [1, 1]
            && self.p == [0, 0]
            && self.oh == self.h
            && self.ow == self.w
    }

    /// Valid output columns `[lo, hi)` for kernel tap `k` along width.
    #[inline]
    fn valid_range(&self, k: usize) -> (usize, usize) {
        let off = (k * self.d[1]) as isize - self.p[1] as isize;
        let s = self.s[1] as isize;
        // need 0 <= o*s + off < w
        let lo = if off >= 0 {
            0
        } else {
            (((-off) + s - 1) / s).min(self.ow as isize)
        };
        let hi_num = self.w as isize - off;
        let hi = if hi_num <= 0 {
            0
        } else {
            ((hi_num + s - 1) / s).min(self.ow as isize)
        };
        (lo as usize, hi.max(lo) as usize)
    }
}

fn im2col<T: Float>(img: &[T], g: &Geom, cols: &mut [T]) {
    let ncols = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = g.valid_range(kj);
                let offw = (kj * g.d[1]) as isize - g.p[1] as isize;
                for oi in 0..g.oh {
                    let dst = &mut dst_row[oi * g.ow..(oi + 1) * g.ow];
                    let ih = (oi * g.s[0] + ki * g.d[0]) as isize - g.p[0] as isize;
                    if ih < 0 || ih as usize >= g.h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &img[(ci * g.h + ih as usize) * g.w..][..g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if g.s[1] == 1 && hi > lo {
                        let start = (lo as isize + offw) as usize;
                        dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (o, v) in dst[lo..hi].iter_mut().enumerate() {
                            *v = src[(((lo + o) * g.s[1]) as isize + offw) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &Geom, img: &mut [T]) {
    let ncols = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = g.valid_range(kj);
                let offw = (kj * g.d[1]) as isize - g.p[1] as isize;
                for oi in 0..g.oh {
                    let ih = (oi * g.s[0] + ki * g.d[0]) as isize - g.p[0] as isize;
                    if ih < 0 || ih as usize >= g.h {
                        continue;
                    }
                    let src = &src_row[oi * g.ow..(oi + 1) * g.ow];
                    let dst = &mut img[(ci * g.h + ih as usize) * g.w..][..g.w];
                    if g.s[1] == 1 && hi > lo {
                        let start = (lo as isize + offw) as usize;
                        for (d, &v) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for o in lo..hi {
                            dst[((o * g.s[1]) as isize + offw) as usize] += src[o];
                        }
                    }
                }
            }
        }
    }
}

fn to4(shape: &[usize]) -> [usize; 4] {
    match *shape {
        [b, c, h, w] => [b, c, h, w],
        _ => panic!("expected a 4-d tensor, got {shape:?}"),
    }
}

/// Raw forward convolution. `x [B, Ci, H, W]`, `w [Co, Ci/g, KH, KW]`.
pub fn conv2d_raw<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Tensor<T> {
    let [b, ci, h, wd] = to4(x.shape());
    let [co, cig, kh, kw] = to4(w.shape());
    let g = spec.groups;
    assert!(
        ci % g == 0 && co % g == 0,
        "channels not divisible by groups"
    );
    assert_eq!(
        cig,
        ci / g,
        "weight in-channels mismatch: {cig} vs {ci}/{g}"
    );
    let oh = spec.out_len(0, h, kh);
    let ow = spec.out_len(1, wd, kw);
    let cog = co / g;
    let geom = Geom {
        c: cig,
        h,
        w: wd,
        kh,
        kw,
        oh,
        ow,
        s: spec.stride,
        p: spec.padding,
        d: spec.dilation,
    };
    let (rows, ncols) = (geom.rows(), geom.cols());
    let mut out = vec![T::zero(); b * co * ncols];
    let mut cols = if geom.is_identity() {
        Vec::new()
    } else {
        vec![T::zero(); rows * ncols]
    };
    let xd = x.data();
    for bi in 0..b {
        for gi in 0..g {
            let img = &xd[(bi * ci + gi * cig) * h * wd..][..cig * h * wd];
            let colm: &[T] = if geom.is_identity() {
                img
            } else {
                im2col(img, &geom, &mut cols);
                &cols
            };
            gemm(
                cog,
                rows,
                ncols,
                T::one(),
                MatRef::new(&w.data()[gi * cog * rows..], rows),
                MatRef::new(colm, ncols),
                T::zero(),
                &mut out[(bi * co + gi * cog) * ncols..],
                ncols,
            );
        }
    }
    if let Some(bias) = bias {
        assert_eq!(bias.len(), co, "bias length mismatch");
        for bi in 0..b {
            for c in 0..co {
                let bv = bias.data()[c];
                for v in &mut out[(bi * co + c) * ncols..][..ncols] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(&[b, co, oh, ow], out)
}

impl<T: Float> Var<T> {
    /// 2-d convolution with optional bias `[Co]`.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: Conv2dSpec) -> Var<T> {
        let out = conv2d_raw(self.value(), weight.value(), bias.map(|b| b.value()), &spec);
        let (x, w) = (self.value_rc(), weight.value_rc());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let has_bias = bias.is_some();
        Var::from_op(out, &parents, move |gout, need| {
            let [b, ci, h, wd] = to4(x.shape());
            let [co, cig, kh, kw] = to4(w.shape());
            let [_, _, oh, ow] = to4(gout.shape());
            let g = spec.groups;
            let cog = co / g;
            let geom = Geom {
                c: cig,
                h,
                w: wd,
                kh,
                kw,
                oh,
                ow,
                s: spec.stride,
                p: spec.padding,
                d: spec.dilation,
            };
            let (rows, ncols) = (geom.rows(), geom.cols());
            let ident = geom.is_identity();
            let mut gx = need[0].then(|| vec![T::zero(); x.len()]);
            let mut gw = need[1].then(|| vec![T::zero(); w.len()]);
            let mut cols = vec![T::zero(); if ident { 0 } else { rows * ncols }];
            let gd = gout.data();
            for bi in 0..b {
                for gi in 0..g {
                    let go = &gd[(bi * co + gi * cog) * ncols..][..cog * ncols];
                    let img_off = (bi * ci + gi * cig) * h * wd;
                    if let Some(gw) = gw.as_mut() {
                        let img = &x.data()[img_off..][..cig * h * wd];
                        let colm: &[T] = if ident {
                            img
                        } else {
                            im2col(img, &geom, &mut cols);
                            &cols
                        };
                        gemm(
                            cog,
                            ncols,
                            rows,
                            T::one(),
                            MatRef::new(go, ncols),
                            MatRef::t(colm, ncols),
                            T::one(),
                            &mut gw[gi * cog * rows..],
                            rows,
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wg = MatRef::t(&w.data()[gi * cog * rows..], rows);
                        if ident {
                            gemm(
                                rows,
                                cog,
                                ncols,
                                T::one(),
                                wg,
                                MatRef::new(go, ncols),
                                T::one(),
                                &mut gx[img_off..],
                                ncols,
                            );
                        } else {
                            gemm(
                                rows,
                                cog,
                                ncols,
                                T::one(),
                                wg,
                                MatRef::new(go, ncols),
                                T::zero(),
                                &mut cols,
                                ncols,
                            );
                            col2im(&cols, &geom, &mut gx[img_off..][..cig * h * wd]);
                        }
                    }
                }
            }
            let mut res = vec![
                gx.map(|d| Tensor::new(x.shape(), d)),
                gw.map(|d| Tensor::new(w.shape(), d)),
            ];
            if has_bias {
                res.push(need[2].then(|| {
                    let mut gb = vec![T::zero(); co];
                    for bi in 0..b {
                        for (c, acc) in gb.iter_mut().enumerate() {
                            *acc += gd[(bi * co + c) * ncols..][..ncols]
                                .iter()
                                .copied()
                                .sum::<T>();
                        }
                    }
                    Tensor::new(&[co], gb)
                }));
            }
            res
        })
    }

    /// 2-d transposed convolution, `weight [Ci, Co, KH, KW]`, groups = 1.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        stride: [usize; 2],
        padding: [usize; 2],
        output_padding: [usize; 2],
    ) -> Var<T> {
        let [b, ci, h, wd] = to4(self.shape());
        let [wci, co, kh, kw] = to4(weight.shape());
        assert_eq!(ci, wci, "transposed conv in-channels mismatch");
        let oh = (h - 1) * stride[0] + kh + output_padding[0] - 2 * padding[0];
        let ow = (wd - 1) * stride[1] + kw + output_padding[1] - 2 * padding[1];
        // Adjoint of a convolution from the (oh, ow) image to the (h, wd) grid.
        let geom = Geom {
            c: co,
            h: oh,
            w: ow,
            kh,
            kw,
            oh: h,
            ow: wd,
            s: stride,
            p: padding,
            d: [1, 1],
        };
        let (rows, ncols) = (geom.rows(), geom.cols());
        let (x, w) = (self.value_rc(), weight.value_rc());
        let mut out = vec![T::zero(); b * co * oh * ow];
        let mut cols = vec![T::zero(); rows * ncols];
        for bi in 0..b {
            gemm(
                rows,
                ci,
                ncols,
                T::one(),
                MatRef::t(w.data(), rows),
                MatRef::new(&x.data()[bi * ci * ncols..], ncols),
                T::zero(),
                &mut cols,
                ncols,
            );
            col2im(&cols, &geom, &mut out[bi * co * oh * ow..][..co * oh * ow]);
        }
        if let Some(bias) = bias {
            for bi in 0..b {
                for c in 0..co {
                    let bv = bias.value().data()[c];
                    for v in &mut out[(bi * co + c) * oh * ow..][..oh * ow] {
                        *v += bv;
                    }
                }
            }
        }
        let out = Tensor::new(&[b, co, oh, ow], out);
        let mut parents = vec![self, weight];
        if let Some(bb) = bias {
            parents.push(bb);
        }
        let has_bias = bias.is_some();
        Var::from_op(out, &parents, move |gout, need| {
            let gd = gout.data();
            let mut cols = vec![T::zero(); rows * ncols];
            let mut gx = need[0].then(|| vec![T::zero(); x.len()]);
            let mut gw = need[1].then(|| vec![T::zero(); w.len()]);
            for bi in 0..b {
                im2col(&gd[bi * co * oh * ow..][..co * oh * ow], &geom, &mut cols);
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        ci,
                        rows,
                        ncols,
                        T::one(),
                        MatRef::new(w.data(), rows),
                        MatRef::new(&cols, ncols),
                        T::zero(),
                        &mut gx[bi * ci * ncols..],
                        ncols,
                    );
                }
                if let Some(gw) = gw.as_mut() {
                    gemm(
                        ci,
                        ncols,
                        rows,
                        T::one(),
                        MatRef::new(&x.data()[bi * ci * ncols..], ncols),
                        MatRef::t(&cols, ncols),
                        T::one(),
                        gw,
                        rows,
                    );
                }
            }
            let mut res = vec![
                gx.map(|d| Tensor::new(x.shape(), d)),
                gw.map(|d| Tensor::new(w.shape(), d)),
            ];
            if has_bias {
                res.push(need[2].then(|| {
                    let mut gb = vec![T::zero(); co];
                    for bi in 0..b {
                        for (c, acc) in gb.iter_mut().enumerate() {
                            *acc += gd[(bi * co + c) * oh * ow..][..oh * ow]
                                .iter()
                                .copied()
                                .sum::<T>();
                        }
                    }
                    Tensor::new(&[co], gb)
                }));
            }
            res
        })
    }

    /// 1-d convolution: `x [B, Ci, L]`, `w [Co, Ci/g, K]`.
    pub fn conv1d(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        stride: usize,
        padding: usize,
        dilation: usize,
        groups: usize,
    ) -> Var<T> {
        let [b, c, l] = to3(self.shape());
        let [co, cig, k] = to3(weight.shape());
        let x4 = self.reshape(&[b, c, 1, l]);
        let w4 = weight.reshape(&[co, cig, 1, k]);
        let y = x4.conv2d(
            &w4,
            bias,
            Conv2dSpec::conv1d(stride, padding, dilation, groups),
        );
        let lo = y.dim(3);
        y.reshape(&[b, co, lo])
    }

    /// 1-d transposed convolution: `x [B, Ci, L]`, `w [Ci, Co, K]`.
    pub fn conv_transpose1d(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Var<T> {
        let [b, c, l] = to3(self.shape());
        let [ci, co, k] = to3(weight.shape());
        let x4 = self.reshape(&[b, c, 1, l]);
        let w4 = weight.reshape(&[ci, co, 1, k]);
        let y = x4.conv_transpose2d(&w4, bias, [1, stride], [0, padding], [0, output_padding]);
        let lo = y.dim(3);
        y.reshape(&[b, co, lo])
    }

    /// Average pooling over the last axis of `[B, C, L]` (padding counted
    /// as zeros, like `count_include_pad`).
    pub fn avg_pool1d(&self, kernel: usize, stride: usize, padding: usize) -> Var<T> {
        let c = self.dim(1);
        let w = Var::constant(Tensor::full(
            &[c, 1, kernel],
            T::one() / T::of(kernel as f64),
        ));
        self.conv1d(&w, None, stride, padding, 1, c)
    }
}

fn to3(shape: &[usize]) -> [usize; 3] {
    match *shape {
        [a, b, c] => [a, b, c],
        _ => panic!("expected a 3-d tensor, got {shape:?}"),
    }
}
