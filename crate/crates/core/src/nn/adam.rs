use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept for trainable entries only,
/// in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Float> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .iter()
            .filter(|e| e.2)
            .map(|e| Tensor::zeros(e.1.shape()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update at learning rate `lr`. `grads` is in store order;
    /// missing gradients count as zero.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        assert_eq!(
            grads.len(),
            store.len(),
            "one gradient slot per store entry"
        );
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        let mut slot = 0;
        for (i, g) in grads.iter().enumerate() {
            if !store.is_trainable(i) {
                continue;
            }
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            slot += 1;
            let p = store.value_mut(i);
            match g {
                Some(g) => {
                    for (((pv, mv), vv), &gv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(g.data())
                    {
                        *mv = b1 * *mv + ob1 * gv;
                        *vv = b2 * *vv + ob2 * gv * gv;
                        *pv -= step_size * *mv / ((*vv).sqrt() * inv_bc2 + eps);
                    }
                }
                None => {
                    for ((pv, mv), vv) in
                        p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut())
                    {
                        *mv = b1 * *mv;
                        *vv = b2 * *vv;
                        *pv -= step_size * *mv / ((*vv).sqrt() * inv_bc2 + eps);
                    }
                }
            }
        }
    }

    /// Checks that the moment shapes match `store`.
    pub fn check_against(&self, store: &ParamStore<T>) -> Result<()> {
        let shapes: Vec<&[usize]> = store.iter().filter(|e| e.2).map(|e| e.1.shape()).collect();
        if shapes.len() != self.m.len()
            || self
                .m
                .iter()
                .zip(&self.v)
                .zip(&shapes)
                .any(|((m, v), s)| m.shape() != *s || v.shape() != *s)
        {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameter layout".into(),
            ));
        }
        Ok(())
    }
}
