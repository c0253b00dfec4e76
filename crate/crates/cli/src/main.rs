mod degrade;
mod evaluate;
mod infer;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hifipp::Error;

/// Bandwidth extension and speech enhancement with HiFi++.
#[derive(Parser)]
#[command(name = "hifipp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band-limit every WAV under a directory, mirroring the tree.
    Degrade(degrade::Args),
    /// Train a generator and its discriminators.
    Train(train::Args),
    /// Denoise audio with a speech-enhancement checkpoint.
    Enhance(infer::Args),
    /// Restore high frequencies with a bandwidth-extension checkpoint.
    Extend(infer::Args),
    /// Score a checkpoint on a manifest and write a CSV report.
    Evaluate(evaluate::Args),
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// Runtime failure, including per-file errors: exit 1.
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownKey(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

/// Collects per-file failures so every failing path is reported.
pub fn per_file(errors: Vec<(String, String)>) -> Result<(), Failure> {
    if errors.is_empty() {
        return Ok(());
    }
    let n = errors.len();
    let list: Vec<String> = errors
        .into_iter()
        .map(|(p, e)| format!("  {p}: {e}"))
        .collect();
    Err(Failure::Run(format!(
        "{n} file(s) failed:\n{}",
        list.join("\n")
    )))
}

/// WAV files under `root` in lexicographic order, relative to `root`.
pub fn wav_tree(root: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for e in walkdir::WalkDir::new(root).sort_by_file_name() {
        let e = e.map_err(|e| Failure::Run(format!("{}: {e}", root.display())))?;
        let p = e.path();
        if e.file_type().is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(
                p.strip_prefix(root)
                    .expect("walk stays under root")
                    .to_path_buf(),
            );
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Degrade(a) => degrade::run(a),
        Command::Train(a) => train::run(a),
        Command::Enhance(a) => infer::run(a, hifipp::degrade::Task::Se),
        Command::Extend(a) => infer::run(a, hifipp::degrade::Task::Bwe),
        Command::Evaluate(a) => evaluate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
