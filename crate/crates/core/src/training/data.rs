use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;

use super::config::SplitSpec;
use crate::audio::{read_wav, resample, Waveform};
use crate::degrade::{degrade_bwe, DegradationSpec, Task};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Which side of the BWE split to list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Model input; `None` when it is synthesized from the target.
    pub input: Option<PathBuf>,
    pub target: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub task: Task,
    /// Rate of the referenced files; `None` for an empty manifest.
    pub sample_rate: Option<u32>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with header `id,input,target`; an empty `input` means none.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let row =
            |w: &mut csv::Writer<_>, r: [&str; 3]| w.write_record(r).map_err(|e| csv_err(path, e));
        row(&mut w, ["id", "input", "target"])?;
        for e in &self.entries {
            let input = e
                .input
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            row(&mut w, [&e.id, &input, &e.target.to_string_lossy()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads [`Self::save_csv`] output; relative paths resolve against the
    /// manifest's directory. Every referenced file is checked.
    pub fn load_csv(path: &Path, task: Task) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let resolve = |s: &str| {
            if Path::new(s).is_absolute() {
                PathBuf::from(s)
            } else {
                base.join(s)
            }
        };
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let (Some(id), Some(input), Some(target)) = (rec.get(0), rec.get(1), rec.get(2)) else {
                return Err(Error::Dataset(vec![format!(
                    "{}: row {:?} needs id,input,target",
                    path.display(),
                    rec
                )]));
            };
            let input = (!input.is_empty()).then(|| resolve(input));
            entries.push(ManifestEntry {
                id: id.into(),
                input,
                target: resolve(target),
            });
        }
        let mut problems = Vec::new();
        let mut rates = BTreeSet::new();
        for e in &entries {
            for p in e.input.iter().chain([&e.target]) {
                match wav_rate(p) {
                    Ok(r) => {
                        rates.insert(r);
                    }
                    Err(err) => problems.push(format!("{}: {err}", p.display())),
                }
            }
        }
        finish(task, entries, rates, problems)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Dataset(vec![format!("{}: {e}", path.display())])
}

fn wav_rate(path: &Path) -> Result<u32> {
    read_wav(path).map(|w| w.sample_rate())
}

fn finish(
    task: Task,
    entries: Vec<ManifestEntry>,
    rates: BTreeSet<u32>,
    mut problems: Vec<String>,
) -> Result<Manifest> {
    if rates.len() > 1 {
        problems.push(format!("mixed sample rates {rates:?}"));
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(problems));
    }
    if entries.is_empty() {
        log::warn!("manifest is empty");
    }
    Ok(Manifest {
        task,
        sample_rate: rates.into_iter().next(),
        entries,
    })
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// The text key of an utterance: the stem after its last `_`.
pub fn utterance_key(stem: &str) -> &str {
    stem.rsplit_once('_').map_or(stem, |(_, k)| k)
}

/// Lists a corpus in lexicographic order.
///
/// BWE: `<root>/<speaker>/<utterance>.wav`, targets only. Held-out speakers
/// form the test part, restricted to their first `holdout_utterances`
/// keys; those keys are removed from every training speaker so no text is
/// shared across the split.
///
/// SE: `<root>/noisy/<id>.wav` paired with `<root>/clean/<id>.wav`; `split`
/// and `part` are ignored.
pub fn build_manifest(root: &Path, task: Task, split: &SplitSpec, part: Part) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(vec![format!(
            "{}: not a directory",
            root.display()
        )]));
    }
    let mut problems = Vec::new();
    let mut rates = BTreeSet::new();
    let mut check = |p: &Path, problems: &mut Vec<String>| match wav_rate(p) {
        Ok(r) => {
            rates.insert(r);
            true
        }
        Err(e) => {
            problems.push(format!("{}: {e}", p.display()));
            false
        }
    };
    let mut entries = Vec::new();
    match task {
        Task::Bwe => {
            let mut speakers: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
            for e in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
                let p = e.map_err(|e| Error::io(root, e))?.path();
                if p.is_dir() {
                    let files = wav_files(&p)?;
                    if !files.is_empty() {
                        speakers
                            .insert(p.file_name().unwrap().to_string_lossy().into_owned(), files);
                    }
                }
            }
            let held: BTreeSet<String> = if split.holdout_speakers.is_empty() {
                let n = speakers.len().saturating_sub(split.holdout_speaker_count);
                speakers.keys().skip(n).cloned().collect()
            } else {
                for s in &split.holdout_speakers {
                    if !speakers.contains_key(s) {
                        log::warn!("held-out speaker `{s}` not found under {}", root.display());
                    }
                }
                split.holdout_speakers.iter().cloned().collect()
            };
            let test_keys = |files: &[PathBuf]| -> BTreeSet<String> {
                let keys: BTreeSet<String> = files
                    .iter()
                    .map(|f| utterance_key(&stem(f)).to_string())
                    .collect();
                keys.into_iter().take(split.holdout_utterances).collect()
            };
            let banned: BTreeSet<String> = speakers
                .iter()
                .filter(|(s, _)| held.contains(*s))
                .flat_map(|(_, f)| test_keys(f))
                .collect();
            for (spk, files) in &speakers {
                let keep: Box<dyn Fn(&str) -> bool> = match (part, held.contains(spk)) {
                    (Part::Train, false) => Box::new(|k| !banned.contains(k)),
                    (Part::Test, true) => {
                        let own = test_keys(files);
                        Box::new(move |k| own.contains(k))
                    }
                    _ => continue,
                };
                for f in files {
                    let s = stem(f);
                    if keep(utterance_key(&s)) && check(f, &mut problems) {
                        entries.push(ManifestEntry {
                            id: format!("{spk}/{s}"),
                            input: None,
                            target: f.clone(),
                        });
                    }
                }
            }
        }
        Task::Se => {
            let (nd, cd) = (root.join("noisy"), root.join("clean"));
            let list = |d: &Path| -> Result<BTreeMap<String, PathBuf>> {
                if !d.is_dir() {
                    return Ok(BTreeMap::new());
                }
                Ok(wav_files(d)?.into_iter().map(|p| (stem(&p), p)).collect())
            };
            let (noisy, clean) = (list(&nd)?, list(&cd)?);
            for id in noisy.keys().filter(|k| !clean.contains_key(*k)) {
                problems.push(format!("{}: no matching clean file", noisy[id].display()));
            }
            for id in clean.keys().filter(|k| !noisy.contains_key(*k)) {
                problems.push(format!("{}: no matching noisy file", clean[id].display()));
            }
            for (id, n) in &noisy {
                if let Some(c) = clean.get(id) {
                    let ok_n = check(n, &mut problems);
                    let ok_c = check(c, &mut problems);
                    if ok_n && ok_c {
                        entries.push(ManifestEntry {
                            id: id.clone(),
                            input: Some(n.clone()),
                            target: c.clone(),
                        });
                    }
                }
            }
        }
    }
    finish(task, entries, rates, problems)
}

#[derive(Clone, Debug)]
pub struct Clip {
    pub id: String,
    pub input: Option<Waveform>,
    pub target: Waveform,
}

/// Decoded clips at the training rate.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub task: Task,
    pub sample_rate: u32,
    pub clips: Vec<Clip>,
}

impl Dataset {
    /// Decodes every entry once, resampling to `sample_rate`. Paired
    /// entries must have equal lengths.
    pub fn load(manifest: &Manifest, sample_rate: u32) -> Result<Self> {
        let mut problems = Vec::new();
        let mut clips = Vec::new();
        let load = |p: &Path| -> Result<Waveform> {
            let w = read_wav(p)?;
            if w.sample_rate() == sample_rate {
                Ok(w)
            } else {
                resample(&w, sample_rate)
            }
        };
        for e in &manifest.entries {
            let target = match load(&e.target) {
                Ok(w) => w,
                Err(err) => {
                    problems.push(format!("{}: {err}", e.target.display()));
                    continue;
                }
            };
            let input = match e.input.as_deref().map(load).transpose() {
                Ok(i) => i,
                Err(err) => {
                    problems.push(format!("{}: {err}", e.input.as_ref().unwrap().display()));
                    continue;
                }
            };
            if let Some(i) = &input {
                if i.len() != target.len() {
                    problems.push(format!(
                        "{}: input has {} samples, target {}",
                        e.id,
                        i.len(),
                        target.len()
                    ));
                    continue;
                }
            }
            if target.is_empty() {
                problems.push(format!("{}: empty clip", e.target.display()));
                continue;
            }
            clips.push(Clip {
                id: e.id.clone(),
                input,
                target,
            });
        }
        if !problems.is_empty() {
            return Err(Error::Dataset(problems));
        }
        Ok(Self {
            task: manifest.task,
            sample_rate,
            clips,
        })
    }

    pub fn from_clips(task: Task, sample_rate: u32, clips: Vec<Clip>) -> Self {
        Self {
            task,
            sample_rate,
            clips,
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// `(input, target)` pairs at full length. BWE inputs are synthesized
    /// from a fixed per-clip seed so repeated calls agree.
    pub fn full_pairs(
        &self,
        spec: &DegradationSpec,
        limit: usize,
    ) -> Result<Vec<(String, Waveform, Waveform)>> {
        self.clips
            .iter()
            .take(limit)
            .enumerate()
            .map(|(i, c)| {
                let x = match &c.input {
                    Some(x) => x.clone(),
                    None => {
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                            spec.seed ^ 0x5eed_0000_0000 ^ i as u64,
                        );
                        degrade_bwe(&c.target, spec, &mut rng)?
                    }
                };
                Ok((c.id.clone(), x, c.target.clone()))
            })
            .collect()
    }
}

use rand::SeedableRng;

/// Index into a signal of length `n` extended by repeated mirroring
/// without edge repetition.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// A uniformly random aligned crop of `len` samples; shorter clips are
/// mirror-extended to fit. BWE inputs are degraded on the fly from the
/// cropped target.
pub fn sample_segment(
    clip: &Clip,
    len: usize,
    task: Task,
    spec: &DegradationSpec,
    rng: &mut impl Rng,
) -> Result<(Waveform, Waveform)> {
    let n = clip.target.len();
    let sr = clip.target.sample_rate();
    let crop = |w: &Waveform, start: usize| -> Waveform {
        if n >= len {
            w.segment(start, len)
        } else {
            let s = w.samples();
            let v = (0..len).map(|i| s[reflect_index(i, n)]).collect();
            Waveform::new(v, sr).expect("finite samples stay finite")
        }
    };
    let start = if n > len {
        rng.random_range(0..=n - len)
    } else {
        0
    };
    let y = crop(&clip.target, start);
    let x = match (&clip.input, task) {
        (Some(x), _) => crop(x, start),
        (None, Task::Bwe) => degrade_bwe(&y, spec, rng)?,
        (None, Task::Se) => {
            return Err(Error::Dataset(vec![format!(
                "{}: SE clip without a noisy input",
                clip.id
            )]))
        }
    };
    Ok((x, y))
}

/// A training batch: `x` and `y` are `[B, L]`.
#[derive(Clone, Debug)]
pub struct Batch<T: Float> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
}

impl<T: Float> Batch<T> {
    pub fn from_pairs(pairs: &[(Waveform, Waveform)]) -> Self {
        let l = pairs.first().map_or(0, |p| p.1.len());
        let cat = |f: fn(&(Waveform, Waveform)) -> &Waveform| -> Vec<f64> {
            pairs
                .iter()
                .flat_map(|p| f(p).samples().iter().copied())
                .collect()
        };
        Self {
            x: Tensor::from_f64(&[pairs.len(), l], &cat(|p| &p.0)),
            y: Tensor::from_f64(&[pairs.len(), l], &cat(|p| &p.1)),
        }
    }
}

/// Draws `batch` clips uniformly with replacement and crops each.
pub fn sample_batch<T: Float>(
    data: &Dataset,
    batch: usize,
    len: usize,
    spec: &DegradationSpec,
    rng: &mut impl Rng,
) -> Result<Batch<T>> {
    if data.is_empty() {
        return Err(Error::Dataset(vec![
            "cannot sample from an empty dataset".into()
        ]));
    }
    let pairs = (0..batch)
        .map(|_| {
            let i = rng.random_range(0..data.len());
            sample_segment(&data.clips[i], len, data.task, spec, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::from_pairs(&pairs))
}
