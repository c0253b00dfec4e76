use std::path::PathBuf;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hifipp::audio::{read_wav, resample, write_wav, WavEncoding};
use hifipp::degrade::{degrade_bwe, DegradationSpec, Task};
use hifipp::metrics::{evaluate, CommandEvaluator, EvalItem, Metric, MetricSet};
use hifipp::training::{build_manifest, Manifest, Part, SplitSpec};

use crate::infer::Model;
use crate::{per_file, Failure};

#[derive(Parser)]
pub struct Args {
    /// Generator checkpoint; omit with `--passthrough`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Manifest CSV (`id,input,target`) or a corpus directory.
    #[arg(long)]
    manifest: PathBuf,
    /// CSV report path.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated metrics; si_sdr and lsd are always reported.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Command scoring `<estimate.wav> <reference.wav>` as WB-PESQ.
    #[arg(long)]
    external_pesq: Option<String>,
    /// Command scoring `<estimate.wav> <reference.wav>` as STOI.
    #[arg(long)]
    external_stoi: Option<String>,
    /// Score the inputs themselves instead of a model.
    #[arg(long)]
    passthrough: bool,
    /// Task of the manifest when no checkpoint supplies it.
    #[arg(long)]
    task: Option<String>,
    /// Band-limited rate used to synthesize missing BWE inputs.
    #[arg(long = "s", default_value_t = 2000)]
    source_rate: u32,
    /// Evaluation rate when no checkpoint supplies it.
    #[arg(long = "S", default_value_t = 16000)]
    sample_rate: u32,
    /// Seed for synthesized BWE inputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resample inputs whose rate differs from the checkpoint's.
    #[arg(long)]
    resample: bool,
}

fn metric_set(a: &Args) -> Result<MetricSet, Failure> {
    let wanted: Vec<Metric> = match &a.metrics {
        None => vec![Metric::SiSdr, Metric::Lsd, Metric::Stoi, Metric::Pesq],
        Some(list) => list
            .iter()
            .map(|m| {
                Metric::parse(m.trim())
                    .ok_or_else(|| Failure::Usage(format!("unknown metric `{m}`")))
            })
            .collect::<Result<_, _>>()?,
    };
    let mut set = MetricSet::default();
    let adapter = |m: Metric,
                   cmd: &Option<String>|
     -> Result<Option<Box<dyn hifipp::metrics::ExternalEvaluator>>, Failure> {
        match (wanted.contains(&m), cmd) {
            (true, Some(c)) => Ok(Some(Box::new(
                CommandEvaluator::parse(c).map_err(|e| Failure::Usage(e.to_string()))?,
            ))),
            (true, None) if a.metrics.is_some() => {
                log::warn!(
                    "{} requested without an external evaluator; column omitted",
                    m.name()
                );
                Ok(None)
            }
            _ => Ok(None),
        }
    };
    set.stoi = adapter(Metric::Stoi, &a.external_stoi)?;
    set.pesq = adapter(Metric::Pesq, &a.external_pesq)?;
    Ok(set)
}

pub fn run(a: Args) -> Result<(), Failure> {
    let set = metric_set(&a)?;
    let model = match (&a.checkpoint, a.passthrough) {
        (Some(p), false) => Some(Model::load(p)?),
        (None, true) => None,
        (Some(_), true) => return Err(Failure::Usage("--passthrough takes no checkpoint".into())),
        (None, false) => {
            return Err(Failure::Usage(
                "--checkpoint is required unless --passthrough is given".into(),
            ))
        }
    };
    let task = match (&a.task, &model) {
        (Some(t), _) => {
            Task::parse(t).ok_or_else(|| Failure::Usage(format!("unknown task `{t}`")))?
        }
        (None, Some(m)) => m.task,
        (None, None) => Task::Bwe,
    };
    let rate = model.as_ref().map_or(a.sample_rate, Model::sample_rate);
    let manifest = if a.manifest.is_dir() {
        build_manifest(
            &a.manifest,
            task,
            &SplitSpec {
                holdout_speakers: Vec::new(),
                holdout_speaker_count: 0,
                holdout_utterances: 0,
            },
            Part::Train,
        )?
    } else {
        Manifest::load_csv(&a.manifest, task)?
    };

    // Missing inputs are synthesized and off-rate references resampled into
    // a scratch directory so every item is a pair of files at `rate`.
    let scratch = tempfile::tempdir().map_err(|e| Failure::Run(e.to_string()))?;
    let spec = DegradationSpec::bwe(a.source_rate, rate, a.seed);
    let mut items = Vec::with_capacity(manifest.len());
    let mut errors = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let prepare = || -> hifipp::Result<EvalItem> {
            let mut reference = e.target.clone();
            let y = read_wav(&e.target)?;
            let y = if y.sample_rate() == rate {
                y
            } else {
                let r = resample(&y, rate)?;
                reference = scratch.path().join(format!("{i}_ref.wav"));
                write_wav(&reference, &r, WavEncoding::Float32)?;
                r
            };
            let input = match &e.input {
                Some(p) => p.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                    rng.set_stream(i as u64);
                    let x = degrade_bwe(&y, &spec, &mut rng)?;
                    let p = scratch.path().join(format!("{i}_in.wav"));
                    write_wav(&p, &x, WavEncoding::Float32)?;
                    p
                }
            };
            Ok(EvalItem {
                id: e.id.clone(),
                input,
                reference,
            })
        };
        match prepare() {
            Ok(it) => items.push(it),
            Err(err) => errors.push((e.target.display().to_string(), err.to_string())),
        }
    }
    per_file(errors)?;

    let resample_inputs = a.resample;
    let report = evaluate(
        &items,
        |x| match &model {
            Some(m) => m.run(x, resample_inputs),
            None if x.sample_rate() == rate => Ok(x.clone()),
            None => resample(x, rate),
        },
        &set,
    )
    .map_err(|errs| {
        let list = errs
            .into_iter()
            .map(|(id, e)| (id, e.to_string()))
            .collect();
        per_file(list).expect_err("non-empty error list")
    })?;
    report.save_csv(&a.out)?;
    println!("{}", report.summary_line());
    Ok(())
}
