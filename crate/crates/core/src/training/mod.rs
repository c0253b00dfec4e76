//! Corpus ingestion, segment sampling, the alternating adversarial
//! optimisation loop and checkpointing.

pub mod checkpoint;
mod config;
mod data;
mod run;
mod trainer;

pub use checkpoint::Archive;
pub use config::{SplitSpec, TrainConfig, PRESETS};
pub use data::{
    build_manifest, sample_batch, sample_segment, utterance_key, Batch, Clip, Dataset, Manifest,
    ManifestEntry, Part,
};
pub use run::{
    deterministic_mode, save_checkpoint, train, train_with, validate, TrainOutcome,
    ValidationRecord, DETERMINISTIC_ENV,
};
pub use trainer::{StepRecord, TrainState, Trainer, P};
