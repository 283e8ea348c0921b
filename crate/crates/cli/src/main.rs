//! Batch front end: runs one experiment configuration and writes its
//! tables, a JSON summary and a manifest into an output directory.

mod config;
mod modes;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::CheckFailed(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "oblique-mv", version, about = "Simulate and probe McKean-Vlasov SDEs with oblique reflection")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "OBLIQUE_MV_THREADS")]
    threads: Option<usize>,
    /// Exit with status 4 when a probe's check fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Output directory; overrides the configuration's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by --config.
    Run,
    /// Describe a bundled system, or list them all.
    Describe { name: Option<String> },
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.join(name).display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("run needs --config <path>".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(path, &text)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let out_dir = cli.out.clone().or_else(|| cfg.output().map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("out"));

    let output = modes::run(&cfg)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut files = Vec::new();
    for (name, bytes) in &output.files {
        write_atomic(&out_dir, name, bytes)?;
        files.push(json!({ "name": name, "bytes": bytes.len(), "sha256": hex(&Sha256::digest(bytes)) }));
    }
    let mut summary = output.summary.clone();
    if let Some(c) = &output.check {
        summary["check"] = json!({ "passed": c.passed, "detail": c.detail });
    }
    let summary_bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    write_atomic(&out_dir, "summary.json", &summary_bytes)?;
    let manifest = json!({
        "tool": "oblique-mv",
        "version": env!("CARGO_PKG_VERSION"),
        "library_version": oblique_mv::VERSION,
        "mode": cfg.mode(),
        "config": path.display().to_string(),
        "config_sha256": hex(&Sha256::digest(text.as_bytes())),
        "seed": cfg.seed(),
        "strict": cli.strict,
        "files": files,
    });
    write_atomic(&out_dir, "manifest.json", &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;

    let mut stdout = std::io::stdout().lock();
    modes::render(cfg.mode(), &output, &mut stdout).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(stdout, "output: {}", out_dir.display()).map_err(|e| CliError::Io(e.to_string()))?;
    match &output.check {
        Some(c) if !c.passed && cli.strict => Err(CliError::CheckFailed(c.detail.clone())),
        _ => Ok(()),
    }
}

fn describe(name: Option<&str>) -> Result<(), CliError> {
    match name {
        Some(n) => print!("{}", oblique_mv::library::describe(n)?),
        None => {
            for n in oblique_mv::library::NAMES {
                println!("{}", oblique_mv::library::describe(n)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Run => run(&cli),
        Command::Describe { name } => describe(name.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
