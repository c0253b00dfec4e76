use std::path::PathBuf;

use clap::Parser;

use hifipp::degrade::Task;
use hifipp::training::{build_manifest, train, Archive, Dataset, Part, TrainConfig, Trainer};

use crate::Failure;

#[derive(Parser)]
pub struct Args {
    /// Corpus root: `<speaker>/<utt>.wav` for BWE, `noisy/` and `clean/` for SE.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for logs, the config echo and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Task preset applied first.
    #[arg(long)]
    task: Option<String>,
    /// Comma-separated presets applied after the task.
    #[arg(long)]
    preset: Option<String>,
    /// key=value config file applied after presets.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to continue from; its config is the base for overrides.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Held-out corpus for SE validation (BWE holds out speakers instead).
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Dotted `key=value` overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn resolve_config(a: &Args) -> Result<(TrainConfig, Option<Archive>), Failure> {
    let (mut cfg, archive) = match &a.resume {
        Some(p) => {
            let ar = Archive::read(p)?;
            (ar.config()?, Some(ar))
        }
        None => {
            let mut c = TrainConfig::default();
            if let Some(t) = &a.task {
                if Task::parse(t).is_none() {
                    return Err(Failure::Usage(format!(
                        "unknown task `{t}`; expected bwe or se"
                    )));
                }
                c.apply_preset(t)?;
            }
            if let Some(p) = &a.preset {
                c.apply_preset(p)?;
            }
            if let Some(f) = &a.config {
                let text = std::fs::read_to_string(f)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", f.display())))?;
                c.apply_text(&text)?;
            }
            (c, None)
        }
    };
    cfg.apply_overrides(&a.overrides)?;
    cfg.validate()?;
    Ok((cfg, archive))
}

pub fn run(a: Args) -> Result<(), Failure> {
    let (cfg, archive) = resolve_config(&a)?;
    let train_m = build_manifest(&a.data, cfg.task, &cfg.split, Part::Train)?;
    let held_m = match (cfg.task, &a.valid) {
        (Task::Bwe, _) => Some(build_manifest(&a.data, cfg.task, &cfg.split, Part::Test)?),
        (Task::Se, Some(v)) => Some(build_manifest(v, cfg.task, &cfg.split, Part::Test)?),
        (Task::Se, None) => None,
    };
    let data = Dataset::load(&train_m, cfg.sample_rate)?;
    if data.is_empty() {
        return Err(Failure::Run(format!(
            "no training clips under {}",
            a.data.display()
        )));
    }
    let held = held_m
        .map(|m| Dataset::load(&m, cfg.sample_rate))
        .transpose()?;
    let mut trainer = match archive {
        Some(ar) => ar.trainer_with(cfg)?,
        None => Trainer::new(cfg)?,
    };
    log::info!(
        "training {} clips ({} held out), generator {} params, {} discriminators, from step {}",
        data.len(),
        held.as_ref().map_or(0, Dataset::len),
        trainer.generator.num_params(),
        trainer.ensemble.len(),
        trainer.state.step
    );
    let out = train(&mut trainer, &data, held.as_ref(), &a.out)?;
    if out.last_checkpoint.is_none() && trainer.state.step > 0 {
        hifipp::training::save_checkpoint(&trainer, &a.out)?;
    }
    log::info!("finished at step {}", trainer.state.step);
    Ok(())
}
