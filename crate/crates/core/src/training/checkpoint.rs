//! Single-file archive: magic, little-endian u64 index length, JSON index,
//! then raw little-endian f32 tensor data in index order.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::{Trainer, P};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::{Adam, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HIFIPPK1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    key: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct OptEntry {
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct RngEntry {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Index {
    config: String,
    step: u64,
    opt_g: OptEntry,
    opt_d: Vec<OptEntry>,
    rng: RngEntry,
    tensors: Vec<TensorEntry>,
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint(format!("bad rng seed `{s}`"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

struct Writer {
    tensors: Vec<TensorEntry>,
    data: Vec<u8>,
}

impl Writer {
    fn push(&mut self, key: String, t: &Tensor<P>, trainable: bool) {
        self.tensors.push(TensorEntry {
            key,
            shape: t.shape().to_vec(),
            trainable,
        });
        for v in t.data() {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn store(&mut self, prefix: &str, s: &ParamStore<P>) {
        for (n, t, tr) in s.iter() {
            self.push(format!("{prefix}{n}"), t, tr);
        }
    }

    fn adam(&mut self, prefix: &str, a: &Adam<P>) {
        for (j, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
            self.push(format!("{prefix}.m.{j}"), m, false);
            self.push(format!("{prefix}.v.{j}"), v, false);
        }
    }
}

/// Serializes the full training state.
pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    let s = &trainer.state;
    let mut w = Writer {
        tensors: Vec::new(),
        data: Vec::new(),
    };
    w.store("g.", &s.g);
    for (i, d) in s.d.iter().enumerate() {
        w.store(&format!("d.{i}."), d);
    }
    w.adam("opt_g", &s.opt_g);
    for (i, a) in s.opt_d.iter().enumerate() {
        w.adam(&format!("opt_d.{i}"), a);
    }
    let index = Index {
        config: trainer.config.to_text(),
        step: s.step,
        opt_g: OptEntry { step: s.opt_g.step },
        opt_d: s.opt_d.iter().map(|a| OptEntry { step: a.step }).collect(),
        rng: RngEntry {
            seed: hex(&s.rng.get_seed()),
            stream: s.rng.get_stream(),
            word_pos: s.rng.get_word_pos().to_string(),
        },
        tensors: w.tensors,
    };
    let json = serde_json::to_vec(&index).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + w.data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&w.data);
    write_atomic(path, &bytes)
}

/// Writes to a sibling temporary file and renames it over `path`, so an
/// interrupted write never replaces a valid file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// A decoded archive.
pub struct Archive {
    index: Index,
    tensors: Vec<(TensorEntry, Tensor<P>)>,
}

impl Archive {
    pub fn read(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes
            .get(16..16 + n)
            .ok_or_else(|| bad("truncated index"))?;
        let index: Index = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        let mut off = 16 + n;
        let mut tensors = Vec::with_capacity(index.tensors.len());
        for e in &index.tensors {
            let len: usize = e.shape.iter().product();
            let raw = bytes
                .get(off..off + 4 * len)
                .ok_or_else(|| bad(&format!("truncated tensor `{}`", e.key)))?;
            off += 4 * len;
            let data = raw
                .chunks_exact(4)
                .map(|c| P::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((
                TensorEntry {
                    key: e.key.clone(),
                    shape: e.shape.clone(),
                    trainable: e.trainable,
                },
                Tensor::new(&e.shape, data),
            ));
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { index, tensors })
    }

    pub fn step(&self) -> u64 {
        self.index.step
    }

    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::parse_text(&self.index.config)
    }

    fn store(&self, prefix: &str) -> Result<ParamStore<P>> {
        let mut s = ParamStore::new();
        for (e, t) in &self.tensors {
            if let Some(name) = e.key.strip_prefix(prefix) {
                s.insert(name, t.clone(), e.trainable)?;
            }
        }
        Ok(s)
    }

    fn adam(&self, prefix: &str, step: u64, like: &Adam<P>) -> Result<Adam<P>> {
        let get = |k: String| {
            self.tensors
                .iter()
                .find(|(e, _)| e.key == k)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing `{k}`")))
        };
        let n = like.m.len();
        let m = (0..n)
            .map(|j| get(format!("{prefix}.m.{j}")))
            .collect::<Result<_>>()?;
        let v = (0..n)
            .map(|j| get(format!("{prefix}.v.{j}")))
            .collect::<Result<_>>()?;
        Ok(Adam {
            config: like.config,
            step,
            m,
            v,
        })
    }

    /// Generator parameters for inference.
    pub fn generator(&self) -> Result<(TrainConfig, Generator, ParamStore<P>)> {
        let config = self.config()?;
        let generator = Generator::new(&config.generator, config.sample_rate)?;
        let mut params = generator.init_params::<P>(0);
        params.load_from(&self.store("g.")?)?;
        Ok((config, generator, params))
    }

    /// Rebuilds a trainer positioned exactly after the saved step.
    pub fn trainer(&self) -> Result<Trainer> {
        self.trainer_with(self.config()?)
    }

    /// [`Self::trainer`] under a modified config, e.g. a longer schedule.
    /// Architecture changes fail on the tensor layout check.
    pub fn trainer_with(&self, config: TrainConfig) -> Result<Trainer> {
        let mut t = Trainer::new(config)?;
        let s = &mut t.state;
        s.g.load_from(&self.store("g.")?)?;
        for (i, d) in s.d.iter_mut().enumerate() {
            d.load_from(&self.store(&format!("d.{i}."))?)?;
        }
        if self.index.opt_d.len() != s.opt_d.len() {
            return Err(Error::Checkpoint(format!(
                "{} discriminator optimizers, expected {}",
                self.index.opt_d.len(),
                s.opt_d.len()
            )));
        }
        s.opt_g = self.adam("opt_g", self.index.opt_g.step, &s.opt_g)?;
        s.opt_g.check_against(&s.g)?;
        for (i, o) in self.index.opt_d.iter().enumerate() {
            s.opt_d[i] = self.adam(&format!("opt_d.{i}"), o.step, &s.opt_d[i])?;
            s.opt_d[i].check_against(&s.d[i])?;
        }
        let r = &self.index.rng;
        let mut rng = ChaCha8Rng::from_seed(unhex(&r.seed)?);
        rng.set_stream(r.stream);
        rng.set_word_pos(
            r.word_pos
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad word position `{}`", r.word_pos)))?,
        );
        s.rng = rng;
        s.step = self.index.step;
        Ok(t)
    }
}

/// Reads a checkpoint and rebuilds its trainer.
pub fn load(path: &Path) -> Result<Trainer> {
    Archive::read(path)?.trainer()
}
