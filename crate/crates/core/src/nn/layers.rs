use rand::Rng;

use super::{Bound, Init, ParamStore};
use crate::tensor::{Conv2dSpec, Float, Tensor, Var};

/// Weight reparameterisation of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    None,
    /// `w = g · v / ‖v‖`, norm over all axes but the first.
    Weight,
    /// `w = W / σ(W)` with σ from one persistent power-iteration vector.
    Spectral,
}

/// 2-d (or 1-d with `H = 1`) convolution, plain or transposed.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub dilation: [usize; 2],
    pub groups: usize,
    pub transposed: bool,
    pub output_padding: [usize; 2],
    pub norm: Norm,
    pub bias: bool,
}

impl Conv {
    pub fn new2d(name: impl Into<String>, cin: usize, cout: usize, kernel: [usize; 2]) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride: [1, 1],
            padding: [0, 0],
            dilation: [1, 1],
            groups: 1,
            transposed: false,
            output_padding: [0, 0],
            norm: Norm::None,
            bias: true,
        }
    }

    pub fn new1d(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        Self::new2d(name, cin, cout, [1, kernel])
    }

    /// Length-preserving padding for odd kernels at stride 1.
    pub fn same(mut self) -> Self {
        for a in 0..2 {
            self.padding[a] = self.dilation[a] * (self.kernel[a] - 1) / 2;
        }
        self
    }

    pub fn stride(mut self, s: [usize; 2]) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: [usize; 2]) -> Self {
        self.padding = p;
        self
    }

    pub fn dilation(mut self, d: [usize; 2]) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    pub fn norm(mut self, n: Norm) -> Self {
        self.norm = n;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let [kh, kw] = self.kernel;
        if self.transposed {
            [self.cin, self.cout, kh, kw]
        } else {
            assert!(
                self.cin.is_multiple_of(self.groups) && self.cout.is_multiple_of(self.groups),
                "{}: channels not divisible by groups",
                self.name
            );
            [self.cout, self.cin / self.groups, kh, kw]
        }
    }

    /// Trainable scalars this layer registers.
    pub fn num_params(&self) -> usize {
        let w = self.weight_shape();
        let mut n = w.iter().product::<usize>();
        if self.norm == Norm::Weight {
            n += w[0];
        }
        if self.bias {
            n += self.cout;
        }
        n
    }

    /// Registers parameters. Weight-norm magnitudes start at `‖v‖`, so the
    /// effective weight equals the drawn `v`.
    pub fn register<T: Float>(
        &self,
        store: &mut ParamStore<T>,
        weight: Init,
        bias: Init,
        rng: &mut impl Rng,
    ) {
        let shape = self.weight_shape();
        let n = &self.name;
        match self.norm {
            Norm::None => store.init(format!("{n}.weight"), &shape, weight, true, rng),
            Norm::Weight => {
                store.init(format!("{n}.weight_v"), &shape, weight, true, rng);
                let v = store.get(&format!("{n}.weight_v")).unwrap().to_f64();
                let per = v.len() / shape[0];
                let g: Vec<f64> = v
                    .chunks(per)
                    .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .collect();
                store
                    .insert(
                        format!("{n}.weight_g"),
                        Tensor::from_f64(&[shape[0], 1, 1, 1], &g),
                        true,
                    )
                    .unwrap();
            }
            Norm::Spectral => {
                store.init(format!("{n}.weight"), &shape, weight, true, rng);
                store.init(format!("{n}.u"), &[shape[0]], Init::UnitNormal, false, rng);
            }
        }
        if self.bias {
            store.init(format!("{n}.bias"), &[self.cout], bias, true, rng);
        }
    }

    /// Effective weight after reparameterisation.
    pub fn weight<T: Float>(&self, p: &Bound<T>) -> Var<T> {
        let n = &self.name;
        match self.norm {
            Norm::None => p.get(&format!("{n}.weight")).clone(),
            Norm::Weight => {
                let v = p.get(&format!("{n}.weight_v"));
                let g = p.get(&format!("{n}.weight_g"));
                let norm = v.square().sum_axes_keep(&[1, 2, 3]).sqrt();
                v.mul(&g.div(&norm))
            }
            Norm::Spectral => {
                let w = p.get(&format!("{n}.weight"));
                let u = p.get(&format!("{n}.u")).value().to_f64();
                let (rows, cols) = (
                    self.weight_shape()[0],
                    w.value().len() / self.weight_shape()[0],
                );
                let wd = w.value().to_f64();
                let v = normalize(&mat_t_vec(&wd, rows, cols, &u));
                let outer: Vec<f64> = u
                    .iter()
                    .flat_map(|&a| v.iter().map(move |&b| a * b))
                    .collect();
                let sigma = w
                    .mul(&Var::constant(Tensor::from_f64(w.shape(), &outer)))
                    .sum_all();
                w.div(&sigma)
            }
        }
    }

    /// One power-iteration step on the persistent vector `u`.
    pub fn refresh_spectral<T: Float>(&self, store: &mut ParamStore<T>) {
        if self.norm != Norm::Spectral {
            return;
        }
        let n = &self.name;
        let w = store.get(&format!("{n}.weight")).unwrap().to_f64();
        let u = store.get(&format!("{n}.u")).unwrap().to_f64();
        let rows = self.weight_shape()[0];
        let cols = w.len() / rows;
        let v = normalize(&mat_t_vec(&w, rows, cols, &u));
        let wv: Vec<f64> = (0..rows)
            .map(|r| (0..cols).map(|c| w[r * cols + c] * v[c]).sum())
            .collect();
        let u_new = normalize(&wv);
        *store.get_mut(&format!("{n}.u")).unwrap() = Tensor::from_f64(&[rows], &u_new);
    }

    /// `x [B, Cin, H, W] -> [B, Cout, H', W']`.
    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let w = self.weight(p);
        let b = self.bias.then(|| p.get(&format!("{}.bias", self.name)));
        if self.transposed {
            x.conv_transpose2d(&w, b, self.stride, self.padding, self.output_padding)
        } else {
            let spec = Conv2dSpec {
                stride: self.stride,
                padding: self.padding,
                dilation: self.dilation,
                groups: self.groups,
            };
            x.conv2d(&w, b, spec)
        }
    }

    /// `x [B, Cin, L] -> [B, Cout, L']` for layers with `H = 1` kernels.
    pub fn forward1d<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let y = self.forward(p, &x.reshape(&[b, c, 1, l]));
        let (co, lo) = (y.dim(1), y.dim(3));
        y.reshape(&[b, co, lo])
    }
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c] += w[r * cols + c] * u[r];
        }
    }
    out
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}
