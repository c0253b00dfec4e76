use std::path::PathBuf;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hifipp::audio::{read_wav, resample, write_wav, WavEncoding};
use hifipp::degrade::{degrade_bwe_traced, DegradationSpec, FilterFamily};

use crate::{per_file, wav_tree, Failure};

#[derive(Parser)]
pub struct Args {
    /// Directory of clean WAV files.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; the input tree is mirrored.
    #[arg(long)]
    output: PathBuf,
    /// Band-limited rate; the low-pass cutoff is half of it.
    #[arg(long = "s", default_value_t = 2000)]
    source_rate: u32,
    /// Rate of inputs and outputs; clean files are resampled to it first.
    #[arg(long = "S", default_value_t = 16000)]
    target_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated filter families to draw from.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
}

/// Stable 64-bit FNV-1a, used to give each file its own random stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn run(a: Args) -> Result<(), Failure> {
    let mut spec = DegradationSpec::bwe(a.source_rate, a.target_rate, a.seed);
    if let Some(f) = &a.families {
        spec.families = f
            .iter()
            .map(|n| {
                FilterFamily::parse(n.trim())
                    .ok_or_else(|| Failure::Usage(format!("unknown filter family `{n}`")))
            })
            .collect::<Result<_, _>>()?;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let files = wav_tree(&a.input)?;
    let errors: Vec<(String, String)> = files
        .par_iter()
        .filter_map(|rel| {
            let key = rel.to_string_lossy().replace('\\', "/");
            let job = || -> hifipp::Result<()> {
                let y = read_wav(a.input.join(rel))?;
                let y = if y.sample_rate() == spec.target_rate {
                    y
                } else {
                    resample(&y, spec.target_rate)?
                };
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                rng.set_stream(fnv1a(&key));
                let (x, trace) = degrade_bwe_traced(&y, &spec, &mut rng)?;
                let out = a.output.join(rel);
                if let Some(d) = out.parent() {
                    std::fs::create_dir_all(d).map_err(|e| hifipp::Error::io(d, e))?;
                }
                write_wav(&out, &x, WavEncoding::Float32)?;
                let sidecar = serde_json::json!({
                    "source": key,
                    "family": trace.family.name(),
                    "order": trace.order,
                    "lag": trace.lag,
                    "seed": a.seed,
                    "stream": fnv1a(&key),
                    "s": spec.source_rate,
                    "S": spec.target_rate,
                });
                let side = out.with_extension("json");
                std::fs::write(&side, format!("{sidecar:#}\n"))
                    .map_err(|e| hifipp::Error::io(&side, e))
            };
            job()
                .err()
                .map(|e| (a.input.join(rel).display().to_string(), e.to_string()))
        })
        .collect();
    log::info!(
        "degraded {} of {} files",
        files.len() - errors.len(),
        files.len()
    );
    per_file(errors)
}
