use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{sample_batch, Batch, Dataset};
use crate::degrade::DegradationSpec;
use crate::discriminators::Ensemble;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::{
    feature_matching_loss, generator_total_loss, lsgan_d_loss, lsgan_g_loss, mel_loss,
};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Training precision.
pub type P = f32;

/// Everything a checkpoint must restore to continue bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed steps.
    pub step: u64,
    pub g: ParamStore<P>,
    pub d: Vec<ParamStore<P>>,
    pub opt_g: Adam<P>,
    pub opt_d: Vec<Adam<P>>,
    /// Drives clip choice, crops and on-the-fly degradation.
    pub rng: ChaCha8Rng,
}

/// Scalars of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub g_adv: f64,
    pub fm: f64,
    pub mel: f64,
    pub g_total: f64,
    /// Per-discriminator `mean((D(y) − 1)²) + mean(D(ŷ)²)`.
    pub d: Vec<f64>,
}

impl StepRecord {
    pub fn header(k: usize) -> Vec<String> {
        let mut h: Vec<String> = ["step", "lr_g", "lr_d", "g_adv", "fm", "mel", "g_total"]
            .map(String::from)
            .to_vec();
        h.extend((0..k).map(|i| format!("d_{i}")));
        h
    }

    pub fn row(&self) -> Vec<String> {
        let mut r = vec![
            self.step.to_string(),
            self.lr_g.to_string(),
            self.lr_d.to_string(),
        ];
        r.extend([self.g_adv, self.fm, self.mel, self.g_total].map(|v| v.to_string()));
        r.extend(self.d.iter().map(f64::to_string));
        r
    }

    fn all_finite(&self) -> bool {
        [self.g_adv, self.fm, self.mel, self.g_total]
            .iter()
            .chain(&self.d)
            .all(|v| v.is_finite())
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub ensemble: Ensemble,
    pub degradation: DegradationSpec,
    pub state: TrainState,
}

fn scalar(v: &Var<P>) -> f64 {
    v.value().item().into()
}

impl Trainer {
    /// Fresh state from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(&config.generator, config.sample_rate)?;
        let ensemble = Ensemble::new(&config.discriminator)?;
        let g = generator.init_params::<P>(config.seed);
        let d = ensemble.init_params::<P>(config.seed.wrapping_add(1));
        let adam = AdamConfig {
            beta1: config.adam_betas.0,
            beta2: config.adam_betas.1,
            ..AdamConfig::default()
        };
        let opt_g = Adam::new(
            AdamConfig {
                lr: config.lr_g,
                ..adam
            },
            &g,
        );
        let opt_d = d
            .iter()
            .map(|s| {
                Adam::new(
                    AdamConfig {
                        lr: config.lr_d,
                        ..adam
                    },
                    s,
                )
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0xda7a);
        let degradation = config.degradation();
        let state = TrainState {
            step: 0,
            g,
            d,
            opt_g,
            opt_d,
            rng,
        };
        Ok(Self {
            config,
            generator,
            ensemble,
            degradation,
            state,
        })
    }

    /// Steps per learning-rate epoch for a corpus of `n` clips.
    pub fn epoch_steps(&self, n: usize) -> u64 {
        if self.config.epoch_steps > 0 {
            self.config.epoch_steps
        } else {
            (n.max(1) as u64).div_ceil(self.config.batch_size as u64)
        }
    }

    /// `(lr_g, lr_d)` after `epochs` completed epochs.
    pub fn learning_rates(&self, epochs: u64) -> (f64, f64) {
        let f = self
            .config
            .lr_decay
            .powi(epochs.min(i32::MAX as u64) as i32);
        (self.config.lr_g * f, self.config.lr_d * f)
    }

    /// Draws the next batch from the state's generator.
    pub fn next_batch(&mut self, data: &Dataset) -> Result<Batch<P>> {
        let c = &self.config;
        sample_batch(
            data,
            c.batch_size,
            c.segment_length,
            &self.degradation,
            &mut self.state.rng,
        )
    }

    /// One discriminator update on detached generator output; returns the
    /// per-member losses. Generator parameters are not touched.
    pub fn discriminator_phase(
        &mut self,
        y: &Tensor<P>,
        y_hat: &Tensor<P>,
        lr: f64,
    ) -> Result<Vec<f64>> {
        let s = &mut self.state;
        d_update(
            &self.ensemble,
            &mut s.d,
            &mut s.opt_d,
            s.step + 1,
            y,
            y_hat,
            lr,
        )
    }

    /// One full step: generator forward, discriminator update on the
    /// detached output, then a generator update against the updated
    /// discriminators.
    pub fn train_step(&mut self, batch: &Batch<P>, epoch_steps: u64) -> Result<StepRecord> {
        let (lr_g, lr_d) = self.learning_rates(self.state.step / epoch_steps.max(1));
        let tape = Tape::new();
        let gp = self.state.g.bind(Some(&tape));
        let x = Var::constant(batch.x.clone());
        let y = Var::constant(batch.y.clone());
        let y_hat = self.generator.forward(&gp, &x);
        let d = d_update(
            &self.ensemble,
            &mut self.state.d,
            &mut self.state.opt_d,
            self.state.step + 1,
            &batch.y,
            y_hat.value(),
            lr_d,
        )?;
        let dp: Vec<_> = self.state.d.iter().map(|s| s.bind(None)).collect();
        let fake = self.ensemble.forward(&dp, &y_hat)?;
        let real = self.ensemble.forward(&dp, &y)?;
        let scores: Vec<Var<P>> = fake.iter().map(|o| o.score.clone()).collect();
        let adv = lsgan_g_loss(&scores);
        let fm = feature_matching_loss(
            &real.into_iter().map(|o| o.features).collect::<Vec<_>>(),
            &fake.into_iter().map(|o| o.features).collect::<Vec<_>>(),
        )?;
        let mel = mel_loss(self.generator.log_mel(), &y, &y_hat);
        let total = generator_total_loss(&adv, &fm, &mel, &self.config.weights);
        let record = StepRecord {
            step: self.state.step + 1,
            lr_g,
            lr_d,
            g_adv: scalar(&adv),
            fm: scalar(&fm),
            mel: scalar(&mel),
            g_total: scalar(&total),
            d,
        };
        if !record.all_finite() {
            return Err(Error::NonFinite {
                step: record.step,
                record: format!("{record:?}"),
            });
        }
        let grads = gp.grads(&total.backward());
        drop(gp);
        self.state.opt_g.update(&mut self.state.g, &grads, lr_g);
        if !self.state.g.all_finite() {
            return Err(Error::NonFinite {
                step: record.step,
                record: format!("generator parameters after {record:?}"),
            });
        }
        self.state.step += 1;
        Ok(record)
    }
}

fn d_update(
    ensemble: &Ensemble,
    d: &mut [ParamStore<P>],
    opt_d: &mut [Adam<P>],
    step: u64,
    y: &Tensor<P>,
    y_hat: &Tensor<P>,
    lr: f64,
) -> Result<Vec<f64>> {
    for (i, store) in d.iter_mut().enumerate() {
        ensemble.refresh_spectral(i, store);
    }
    let tape = Tape::new();
    let bound: Vec<_> = d.iter().map(|st| st.bind(Some(&tape))).collect();
    let real = ensemble.forward(&bound, &Var::constant(y.clone()))?;
    let fake = ensemble.forward(&bound, &Var::constant(y_hat.clone()))?;
    let losses: Vec<Var<P>> = real
        .iter()
        .zip(&fake)
        .map(|(r, f)| lsgan_d_loss(&r.score, &f.score))
        .collect();
    let values: Vec<f64> = losses.iter().map(scalar).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step,
            record: format!("discriminator losses {values:?}"),
        });
    }
    let total = losses
        .iter()
        .skip(1)
        .fold(losses[0].clone(), |a, b| a.add(b));
    let grads = total.backward();
    let per: Vec<_> = bound.iter().map(|b| b.grads(&grads)).collect();
    drop(bound);
    for ((store, opt), g) in d.iter_mut().zip(opt_d.iter_mut()).zip(per) {
        opt.update(store, &g, lr);
    }
    Ok(values)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::audio::Waveform;
    use crate::degrade::Task;
    use crate::training::data::Clip;
    use rand::Rng;

    pub(crate) fn small_config() -> TrainConfig {
        let mut c = TrainConfig::preset("bwe,tiny").unwrap();
        c.segment_length = 1024;
        c.batch_size = 2;
        c.total_steps = 4;
        c.seed = 3;
        c
    }

    pub(crate) fn noise_dataset(n: usize, len: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let clips = (0..n)
            .map(|i| {
                let v = (0..len).map(|_| rng.random_range(-0.3..0.3)).collect();
                Clip {
                    id: format!("c{i}"),
                    input: None,
                    target: Waveform::new(v, 16000).unwrap(),
                }
            })
            .collect();
        Dataset::from_clips(Task::Bwe, 16000, clips)
    }

    fn stores(t: &Trainer) -> Vec<ParamStore<P>> {
        let mut v = vec![t.state.g.clone()];
        v.extend(t.state.d.iter().cloned());
        v
    }

    fn same(a: &[ParamStore<P>], b: &[ParamStore<P>]) -> bool {
        a.iter().zip(b).all(|(x, y)| {
            x.iter()
                .zip(y.iter())
                .all(|(p, q)| p.1.data() == q.1.data())
        })
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise() {
        let mut c = small_config();
        c.lr_g = 0.0;
        c.lr_d = 0.0;
        let mut t = Trainer::new(c).unwrap();
        let data = noise_dataset(2, 3000);
        let before = stores(&t);
        for _ in 0..2 {
            let b = t.next_batch(&data).unwrap();
            t.train_step(&b, 1).unwrap();
        }
        // Spectral-norm buffers are not trainable; everything trainable must match.
        assert!(same(&before, &stores(&t)));
    }

    #[test]
    fn discriminator_phase_leaves_generator_alone() {
        let mut t = Trainer::new(small_config()).unwrap();
        let data = noise_dataset(2, 3000);
        let b = t.next_batch(&data).unwrap();
        let g0 = t.state.g.clone();
        let d0 = t.state.d.clone();
        let y_hat = t
            .generator
            .forward(&t.state.g.bind(None), &Var::constant(b.x.clone()))
            .value()
            .clone();
        t.discriminator_phase(&b.y, &y_hat, 2e-4).unwrap();
        assert!(same(&[g0], &[t.state.g.clone()]));
        assert!(!same(&d0, &t.state.d));
    }

    #[test]
    fn every_discriminator_optimizer_advances_once_per_step() {
        let mut t = Trainer::new(small_config()).unwrap();
        assert_eq!(t.state.opt_d.len(), 3);
        let data = noise_dataset(2, 3000);
        let b = t.next_batch(&data).unwrap();
        let rec = t.train_step(&b, 1).unwrap();
        assert_eq!(rec.d.len(), 3);
        assert!(t.state.opt_d.iter().all(|o| o.step == 1));
        assert_eq!((t.state.opt_g.step, t.state.step), (1, 1));
        assert!(rec.d.iter().all(|d| *d > 0.0 && *d < 2.0), "{:?}", rec.d);
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let t = Trainer::new(small_config()).unwrap();
        assert_eq!(t.epoch_steps(5), 3);
        let (g, d) = t.learning_rates(2);
        assert!((g - 2e-4 * 0.999f64.powi(2)).abs() < 1e-18 && (d - g).abs() < 1e-18);
    }

    #[test]
    fn non_finite_loss_aborts_with_record() {
        let mut t = Trainer::new(small_config()).unwrap();
        let data = noise_dataset(1, 3000);
        let b = t.next_batch(&data).unwrap();
        let name = t.state.g.names()[0].clone();
        t.state.g.get_mut(&name).unwrap().data_mut()[0] = f32::NAN;
        let err = t.train_step(&b, 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1, .. }), "{err}");
    }
}
