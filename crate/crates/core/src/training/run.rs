use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand_chacha::ChaCha8Rng;

use super::checkpoint;
use super::data::{sample_batch, Batch, Dataset};
use super::trainer::{StepRecord, Trainer, P};
use crate::error::{Error, Result};
use crate::losses::mel_loss_waveforms;
use crate::metrics::si_sdr;

/// Environment variable that forces synchronous, ordered data loading.
pub const DETERMINISTIC_ENV: &str = "HIFIPP_DETERMINISTIC";

pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationRecord {
    pub step: u64,
    pub mel: f64,
    pub si_sdr: f64,
}

pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub validation: Vec<ValidationRecord>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Mean mel loss and SI-SDR of the generator on full-length held-out clips.
pub fn validate(trainer: &Trainer, held_out: &Dataset) -> Result<ValidationRecord> {
    let pairs = held_out.full_pairs(&trainer.degradation, trainer.config.validation_clips)?;
    let (mut mel, mut sdr, mut n) = (0.0, 0.0, 0usize);
    for (_, x, y) in &pairs {
        let y_hat = trainer.generator.infer(&trainer.state.g, x)?;
        mel += mel_loss_waveforms(trainer.generator.log_mel(), y, &y_hat)?;
        sdr += si_sdr(&y_hat, y)?;
        n += 1;
    }
    let n = n.max(1) as f64;
    Ok(ValidationRecord {
        step: trainer.state.step,
        mel: mel / n,
        si_sdr: sdr / n,
    })
}

fn csv_writer(path: &Path, header: &[String], append: bool) -> Result<csv::Writer<std::fs::File>> {
    let exists = append && path.exists();
    let f = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    if !exists {
        w.write_record(header)
            .map_err(|e| Error::Dataset(vec![format!("{}: {e}", path.display())]))?;
    }
    Ok(w)
}

/// Source of batches with the generator state that follows each one, so a
/// checkpoint can record the position of the last consumed batch.
enum Loader {
    Sync,
    Prefetch(mpsc::Receiver<Result<(Batch<P>, ChaCha8Rng)>>),
}

/// Runs `trainer` until `total_steps`, writing `train_log.csv`,
/// `validation.csv`, `config.txt` and checkpoints into `out_dir`. Loading
/// mode follows [`deterministic_mode`].
pub fn train(
    trainer: &mut Trainer,
    data: &Dataset,
    held_out: Option<&Dataset>,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    train_with(trainer, data, held_out, out_dir, deterministic_mode())
}

/// [`train`] with an explicit loading mode. Both modes consume the same
/// batch sequence; prefetching only overlaps sampling with compute.
pub fn train_with(
    trainer: &mut Trainer,
    data: &Dataset,
    held_out: Option<&Dataset>,
    out_dir: &Path,
    synchronous: bool,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    checkpoint::write_atomic(
        &out_dir.join("config.txt"),
        trainer.config.to_text().as_bytes(),
    )?;
    let resumed = trainer.state.step > 0;
    let k = trainer.ensemble.len();
    let log_path = out_dir.join("train_log.csv");
    let mut log = csv_writer(&log_path, &StepRecord::header(k), resumed)?;
    let val_path = out_dir.join("validation.csv");
    let mut val_log = csv_writer(
        &val_path,
        &["step", "mel", "si_sdr"].map(String::from),
        resumed,
    )?;
    let csv_err = |p: &Path, e: csv::Error| Error::Dataset(vec![format!("{}: {e}", p.display())]);
    let epoch = trainer.epoch_steps(data.len());
    let mut out = TrainOutcome {
        records: Vec::new(),
        validation: Vec::new(),
        last_checkpoint: None,
    };
    let c = trainer.config.clone();
    let remaining = c.total_steps.saturating_sub(trainer.state.step);

    std::thread::scope(|scope| -> Result<()> {
        let loader = if synchronous {
            Loader::Sync
        } else {
            let (tx, rx) = mpsc::sync_channel(2);
            let mut rng = trainer.state.rng.clone();
            let spec = trainer.degradation.clone();
            let (batch, len) = (c.batch_size, c.segment_length);
            scope.spawn(move || {
                for _ in 0..remaining {
                    let b = sample_batch::<P>(data, batch, len, &spec, &mut rng)
                        .map(|b| (b, rng.clone()));
                    let failed = b.is_err();
                    if tx.send(b).is_err() || failed {
                        break;
                    }
                }
            });
            Loader::Prefetch(rx)
        };
        while trainer.state.step < c.total_steps {
            let batch = match &loader {
                Loader::Sync => trainer.next_batch(data)?,
                Loader::Prefetch(rx) => {
                    let (b, rng) = rx
                        .recv()
                        .map_err(|_| Error::Dataset(vec!["data loader stopped".into()]))??;
                    trainer.state.rng = rng;
                    b
                }
            };
            let rec = trainer.train_step(&batch, epoch)?;
            if c.log_every > 0 && rec.step % c.log_every == 0 {
                log.write_record(rec.row())
                    .map_err(|e| csv_err(&log_path, e))?;
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                log::info!(
                    "step {} mel {:.4} adv {:.4} fm {:.4} d {:?}",
                    rec.step,
                    rec.mel,
                    rec.g_adv,
                    rec.fm,
                    rec.d
                        .iter()
                        .map(|v| (v * 1e4).round() / 1e4)
                        .collect::<Vec<_>>()
                );
            }
            let step = rec.step;
            out.records.push(rec);
            if let Some(h) = held_out
                .filter(|h| !h.is_empty() && c.validate_every > 0 && step % c.validate_every == 0)
            {
                let v = validate(trainer, h)?;
                val_log
                    .write_record([v.step.to_string(), v.mel.to_string(), v.si_sdr.to_string()])
                    .map_err(|e| csv_err(&val_path, e))?;
                val_log.flush().map_err(|e| Error::io(&val_path, e))?;
                log::info!(
                    "validation step {} mel {:.4} si_sdr {:.2}",
                    v.step,
                    v.mel,
                    v.si_sdr
                );
                out.validation.push(v);
            }
            if (c.checkpoint_every > 0 && step % c.checkpoint_every == 0) || step == c.total_steps {
                out.last_checkpoint = Some(save_checkpoint(trainer, out_dir)?);
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Writes `step_<n>.ckpt` and refreshes `latest.ckpt`.
pub fn save_checkpoint(trainer: &Trainer, out_dir: &Path) -> Result<PathBuf> {
    let p = out_dir.join(format!("step_{:08}.ckpt", trainer.state.step));
    checkpoint::save(trainer, &p)?;
    checkpoint::save(trainer, &out_dir.join("latest.ckpt"))?;
    Ok(p)
}
