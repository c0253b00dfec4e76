use rand::Rng;

use crate::nn::{Bound, Conv, Init, ParamStore};
use crate::tensor::{Float, Var};

/// Encoder-decoder over `[B, C, H, W]` maps with four resolution levels.
///
/// Level `i` runs a residual stack at width `W_i`, then a strided conv
/// (kernel = stride) to `W_{i+1}` (`W_3` at the last level). The decoder
/// mirrors it with transposed convs and additive skips. Both spatial dims
/// must be divisible by `stride^4`.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: [usize; 4],
    pub depth: usize,
    pub stride: [usize; 2],
    /// Leaky-ReLU slope; `1.0` makes the network linear.
    pub slope: f64,
    in_conv: Conv,
    enc: Vec<Vec<Conv>>,
    down: Vec<Conv>,
    up: Vec<Conv>,
    dec: Vec<Vec<Conv>>,
    out_conv: Conv,
}

pub const LEVELS: usize = 4;

impl UNet2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        widths: [usize; 4],
        depth: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
    ) -> Self {
        let stack = |prefix: String, w: usize| -> Vec<Conv> {
            (0..depth)
                .map(|j| Conv::new2d(format!("{prefix}.{j}"), w, w, kernel).same())
                .collect()
        };
        let next = |i: usize| widths[(i + 1).min(LEVELS - 1)];
        Self {
            in_channels,
            out_channels,
            widths,
            depth,
            stride,
            slope: 0.1,
            in_conv: Conv::new2d(format!("{name}.in_conv"), in_channels, widths[0], kernel).same(),
            enc: (0..LEVELS)
                .map(|i| stack(format!("{name}.enc.{i}"), widths[i]))
                .collect(),
            down: (0..LEVELS)
                .map(|i| {
                    Conv::new2d(format!("{name}.down.{i}"), widths[i], next(i), stride)
                        .stride(stride)
                })
                .collect(),
            up: (0..LEVELS)
                .map(|i| {
                    Conv::new2d(format!("{name}.up.{i}"), next(i), widths[i], stride)
                        .stride(stride)
                        .transposed()
                })
                .collect(),
            dec: (0..LEVELS)
                .map(|i| stack(format!("{name}.dec.{i}"), widths[i]))
                .collect(),
            out_conv: Conv::new2d(format!("{name}.out_conv"), widths[0], out_channels, kernel)
                .same(),
        }
    }

    /// Spatial multiple both input dims must satisfy.
    pub fn granularity(&self) -> [usize; 2] {
        [
            self.stride[0].pow(LEVELS as u32),
            self.stride[1].pow(LEVELS as u32),
        ]
    }

    pub fn layers(&self) -> impl Iterator<Item = &Conv> {
        std::iter::once(&self.in_conv)
            .chain(self.enc.iter().flatten())
            .chain(&self.down)
            .chain(&self.up)
            .chain(self.dec.iter().flatten())
            .chain(std::iter::once(&self.out_conv))
    }

    pub fn out_conv(&self) -> &Conv {
        &self.out_conv
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Conv::num_params).sum()
    }

    pub fn register<T: Float>(&self, store: &mut ParamStore<T>, std: f64, rng: &mut impl Rng) {
        for c in self.layers() {
            c.register(store, Init::Normal(std), Init::Const(0.0), rng);
        }
    }

    fn res_stack<T: Float>(&self, p: &Bound<T>, convs: &[Conv], mut h: Var<T>) -> Var<T> {
        for c in convs {
            h = h.add(&c.forward(p, &h.leaky_relu(self.slope)));
        }
        h
    }

    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let g = self.granularity();
        assert!(
            x.dim(2).is_multiple_of(g[0]) && x.dim(3).is_multiple_of(g[1]),
            "UNet input {:?} not divisible by {g:?}",
            x.shape()
        );
        let mut h = self.in_conv.forward(p, x);
        let mut skips = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            h = self.res_stack(p, &self.enc[i], h);
            skips.push(h.clone());
            h = self.down[i].forward(p, &h);
        }
        for i in (0..LEVELS).rev() {
            h = self.up[i].forward(p, &h).add(&skips[i]);
            h = self.res_stack(p, &self.dec[i], h);
        }
        self.out_conv.forward(p, &h.leaky_relu(self.slope))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tensor, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent count: conv weights `co·ci·kh·kw` plus bias `co`.
    fn oracle(
        cin: usize,
        cout: usize,
        w: [usize; 4],
        depth: usize,
        k: [usize; 2],
        s: [usize; 2],
    ) -> usize {
        let conv = |ci: usize, co: usize, kk: usize| co * ci * kk + co;
        let (kk, ss) = (k[0] * k[1], s[0] * s[1]);
        let mut n = conv(cin, w[0], kk) + conv(w[0], cout, kk);
        for i in 0..4 {
            let nx = if i == 3 { w[3] } else { w[i + 1] };
            n += 2 * depth * conv(w[i], w[i], kk);
            n += conv(w[i], nx, ss) + conv(nx, w[i], ss);
        }
        n
    }

    #[test]
    fn parameter_count_matches_enumeration() {
        let u = UNet2d::new("u", 1, 1, [8, 16, 32, 64], 4, [3, 3], [2, 2]);
        assert_eq!(
            u.num_params(),
            oracle(1, 1, [8, 16, 32, 64], 4, [3, 3], [2, 2])
        );
        let u = UNet2d::new("u", 9, 4, [10, 20, 40, 80], 4, [1, 5], [1, 4]);
        assert_eq!(
            u.num_params(),
            oracle(9, 4, [10, 20, 40, 80], 4, [1, 5], [1, 4])
        );
        let mut s = ParamStore::<f32>::new();
        u.register(&mut s, 0.01, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.num_trainable(), u.num_params());
    }

    #[test]
    fn preserves_spatial_shape() {
        let u = UNet2d::new("u", 2, 3, [4, 5, 6, 7], 1, [3, 3], [2, 2]);
        let mut s = ParamStore::<f64>::new();
        u.register(&mut s, 0.1, &mut ChaCha8Rng::seed_from_u64(1));
        let y = u.forward(
            &s.bind(None),
            &Var::constant(Tensor::zeros(&[2, 2, 16, 32])),
        );
        assert_eq!(y.shape(), &[2, 3, 16, 32]);
    }

    #[test]
    fn gradients_reach_every_layer() {
        use crate::tensor::testutil::{check_grad, rand_tensor};
        let u = UNet2d::new("u", 1, 1, [2, 3, 3, 4], 1, [3, 3], [2, 2]);
        let mut s = ParamStore::<f64>::new();
        u.register(&mut s, 0.3, &mut ChaCha8Rng::seed_from_u64(2));
        let x = Var::constant(rand_tensor(&[1, 1, 16, 16], 3));
        check_grad(&s.trainable_values(), |_, v| {
            u.forward(&s.bind_vars(v), &x).square().mean_all()
        });
    }
}
