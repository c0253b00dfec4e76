//! Objective quality metrics and the dataset evaluation driver.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::audio::{stft, write_wav, StftConfig, WavEncoding, Waveform};
use crate::error::{Error, Result};

/// Scale-invariant signal-to-distortion ratio in dB; `+∞` when `est` is an
/// exact multiple of `reference`.
pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Length(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let rr = reference.energy();
    if rr == 0.0 {
        return Err(Error::Degenerate("reference is silent".into()));
    }
    let (e, r) = (est.samples(), reference.samples());
    let alpha = e.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let resid: f64 = e.iter().zip(r).map(|(a, b)| (alpha * b - a).powi(2)).sum();
    if resid == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target / resid).log10())
}

/// Magnitude floor inside the log of [`lsd`].
pub const LSD_FLOOR: f64 = 1e-8;

/// Log-spectral distance: mean over frames of the RMS over bins of
/// `log10|X| − log10|Y|`.
pub fn lsd(est: &Waveform, reference: &Waveform, cfg: &StftConfig) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Length(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let (a, b) = (stft(est, cfg)?, stft(reference, cfg)?);
    let (bins, frames) = (a.bins(), a.frames());
    let mut total = 0.0;
    for t in 0..frames {
        let mut acc = 0.0;
        for k in 0..bins {
            let d = a.get(k, t).norm().max(LSD_FLOOR).log10()
                - b.get(k, t).norm().max(LSD_FLOOR).log10();
            acc += d * d;
        }
        total += (acc / bins as f64).sqrt();
    }
    Ok(total / frames as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    SiSdr,
    Lsd,
    Stoi,
    Pesq,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::SiSdr, Metric::Lsd, Metric::Stoi, Metric::Pesq];

    pub fn name(self) -> &'static str {
        match self {
            Metric::SiSdr => "si_sdr",
            Metric::Lsd => "lsd",
            Metric::Stoi => "stoi",
            Metric::Pesq => "pesq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_external(self) -> bool {
        matches!(self, Metric::Stoi | Metric::Pesq)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scores a pair of WAV files (estimate, reference) with an implementation
/// living outside this crate.
pub trait ExternalEvaluator {
    fn score(&self, estimate: &Path, reference: &Path) -> Result<f64>;
}

/// Runs `program args… <estimate> <reference>` and parses the last
/// non-empty stdout line as the score.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandEvaluator {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandEvaluator {
    /// Splits a command line on whitespace.
    pub fn parse(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty external evaluator command".into()))?;
        Ok(Self {
            program,
            args: parts.collect(),
        })
    }
}

impl ExternalEvaluator for CommandEvaluator {
    fn score(&self, estimate: &Path, reference: &Path) -> Result<f64> {
        let fail = |detail: String| Error::External {
            name: self.program.clone(),
            detail,
        };
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(estimate)
            .arg(reference)
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let line = stdout
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| fail("printed nothing".into()))?;
        line.trim()
            .parse::<f64>()
            .map_err(|_| fail(format!("printed `{}`, not a number", line.trim())))
    }
}

/// Metrics an evaluation computes. SI-SDR and LSD are always present;
/// external columns appear only when requested and wired.
#[derive(Default)]
pub struct MetricSet {
    pub stoi: Option<Box<dyn ExternalEvaluator>>,
    pub pesq: Option<Box<dyn ExternalEvaluator>>,
    pub stft: StftConfig,
}

impl MetricSet {
    pub fn columns(&self) -> Vec<Metric> {
        let mut c = vec![Metric::SiSdr, Metric::Lsd];
        if self.stoi.is_some() {
            c.push(Metric::Stoi);
        }
        if self.pesq.is_some() {
            c.push(Metric::Pesq);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub si_sdr: f64,
    pub lsd: f64,
    pub stoi: Option<f64>,
    pub pesq: Option<f64>,
}

impl EvalRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::SiSdr => Some(self.si_sdr),
            Metric::Lsd => Some(self.lsd),
            Metric::Stoi => self.stoi,
            Metric::Pesq => self.pesq,
        }
    }
}

/// Mean and population standard deviation. Identical values (including
/// infinities) have zero spread.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub columns: Vec<Metric>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn aggregate(&self, m: Metric) -> (f64, f64) {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.get(m)).collect();
        mean_std(&v)
    }

    /// `si_sdr=<mean>±<std> lsd=<mean>±<std>`, then any external columns.
    pub fn summary_line(&self) -> String {
        self.columns
            .iter()
            .map(|&m| {
                let (mu, sd) = self.aggregate(m);
                format!("{m}={}±{}", fmt_value(mu), fmt_value(sd))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let ext = |e: csv::Error| Error::External {
            name: "csv".into(),
            detail: e.to_string(),
        };
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().map(|m| m.name().to_string()));
        out.write_record(&header).map_err(ext)?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone()];
            rec.extend(
                self.columns
                    .iter()
                    .map(|&m| r.get(m).map(fmt_value).unwrap_or_default()),
            );
            out.write_record(&rec).map_err(ext)?;
        }
        out.flush().map_err(|e| Error::External {
            name: "csv".into(),
            detail: e.to_string(),
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Renders `+∞` as `inf`, `−∞` as `-inf`.
pub fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// One utterance to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub input: PathBuf,
    pub reference: PathBuf,
}

/// Scores an estimate against its reference. Lengths are aligned by
/// truncating to the shorter signal.
pub fn score_pair(
    id: &str,
    est: &Waveform,
    reference: &Waveform,
    set: &MetricSet,
) -> Result<EvalRow> {
    let n = est.len().min(reference.len());
    let est = est.segment(0, n);
    let reference = reference.segment(0, n);
    let si = si_sdr(&est, &reference)?;
    let l = lsd(&est, &reference, &set.stft)?;
    let mut row = EvalRow {
        id: id.to_string(),
        si_sdr: si,
        lsd: l,
        stoi: None,
        pesq: None,
    };
    if set.stoi.is_some() || set.pesq.is_some() {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let (pe, pr) = (
            dir.path().join("estimate.wav"),
            dir.path().join("reference.wav"),
        );
        write_wav(&pe, &est, WavEncoding::Float32)?;
        write_wav(&pr, &reference, WavEncoding::Float32)?;
        row.stoi = set.stoi.as_ref().map(|e| e.score(&pe, &pr)).transpose()?;
        row.pesq = set.pesq.as_ref().map(|e| e.score(&pe, &pr)).transpose()?;
    }
    Ok(row)
}

/// Runs `model` on each item's input and scores it against the reference.
/// Every failing item is reported; the report is returned only if none
/// failed.
pub fn evaluate<F>(
    items: &[EvalItem],
    mut model: F,
    set: &MetricSet,
) -> std::result::Result<EvalReport, Vec<(String, Error)>>
where
    F: FnMut(&Waveform) -> Result<Waveform>,
{
    let mut rows = Vec::with_capacity(items.len());
    let mut errors = Vec::new();
    for item in items {
        let mut run = || -> Result<EvalRow> {
            let x = crate::audio::read_wav(&item.input)?;
            let y = crate::audio::read_wav(&item.reference)?;
            let est = model(&x)?;
            score_pair(&item.id, &est, &y, set)
        };
        match run() {
            Ok(r) => rows.push(r),
            Err(e) => errors.push((item.id.clone(), e)),
        }
    }
    if errors.is_empty() {
        Ok(EvalReport {
            columns: set.columns(),
            rows,
        })
    } else {
        Err(errors)
    }
}
