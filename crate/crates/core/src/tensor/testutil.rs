//! Finite-difference gradient checking for engine tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Compares analytic gradients of a scalar function with central
/// differences at every input coordinate.
pub fn check_grad(inputs: &[Tensor<f64>], f: impl Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>) {
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&tape, &vars);
    assert_eq!(y.value().len(), 1, "check_grad needs a scalar function");
    let grads = y.backward();
    let eps = 1e-6;
    for (vi, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&vars[vi]);
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let t = Tape::new();
                let vs: Vec<Var<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let mut x = x.clone();
                        if j == vi {
                            x.data_mut()[i] += delta;
                        }
                        t.leaf(x)
                    })
                    .collect();
                f(&t, &vs).value().item()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
            assert!(
                err < 1e-5,
                "input {vi} coord {i}: analytic {a} vs numeric {numeric} (rel err {err})"
            );
        }
    }
}
