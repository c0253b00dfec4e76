use std::path::{Path, PathBuf};

use clap::Parser;

use hifipp::audio::{read_wav, resample, write_wav, WavEncoding};
use hifipp::degrade::Task;
use hifipp::generator::Generator;
use hifipp::nn::ParamStore;
use hifipp::training::{Archive, P};
use hifipp::Waveform;

use crate::{per_file, wav_tree, Failure};

/// Inference window and crossfade overlap, in samples.
pub const CHUNK: usize = 1 << 18;
pub const OVERLAP: usize = 4096;

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A WAV file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    output: PathBuf,
    /// Resample inputs whose rate differs from the checkpoint's.
    #[arg(long)]
    resample: bool,
}

pub struct Model {
    pub generator: Generator,
    pub params: ParamStore<P>,
    pub task: Task,
}

impl Model {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let (cfg, generator, params) = Archive::read(path)?.generator()?;
        Ok(Self {
            generator,
            params,
            task: cfg.task,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.generator.sample_rate()
    }

    /// Runs the generator on `x`; other rates are an error unless
    /// `allow_resample` is set. The output keeps the (resampled) length.
    pub fn run(&self, x: &Waveform, allow_resample: bool) -> hifipp::Result<Waveform> {
        let x = if x.sample_rate() == self.sample_rate() {
            x.clone()
        } else if allow_resample {
            resample(x, self.sample_rate())?
        } else {
            return Err(hifipp::Error::Parameter(format!(
                "input is {} Hz but the checkpoint runs at {} Hz; pass --resample to convert",
                x.sample_rate(),
                self.sample_rate()
            )));
        };
        self.generator
            .infer_chunked(&self.params, &x, CHUNK, OVERLAP)
    }
}

pub fn run(a: Args, task: Task) -> Result<(), Failure> {
    let model = Model::load(&a.checkpoint)?;
    if model.task != task {
        log::warn!(
            "checkpoint was trained for {} but is used for {}",
            model.task,
            task
        );
    }
    let process = |src: &Path, dst: &Path| -> hifipp::Result<()> {
        let y = model.run(&read_wav(src)?, a.resample)?;
        if let Some(d) = dst.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d).map_err(|e| hifipp::Error::io(d, e))?;
        }
        write_wav(dst, &y, WavEncoding::Float32)
    };
    if a.input.is_dir() {
        let mut errors = Vec::new();
        let files = wav_tree(&a.input)?;
        for rel in &files {
            if let Err(e) = process(&a.input.join(rel), &a.output.join(rel)) {
                errors.push((a.input.join(rel).display().to_string(), e.to_string()));
            }
        }
        log::info!(
            "processed {} of {} files",
            files.len() - errors.len(),
            files.len()
        );
        per_file(errors)
    } else {
        process(&a.input, &a.output)
            .map_err(|e| Failure::Run(format!("{}: {e}", a.input.display())))
    }
}
