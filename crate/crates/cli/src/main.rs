use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use imvulog::carver::{ScanConfig, DEFAULT_CHUNK_BYTES, DEFAULT_MIN_SCORE, DEFAULT_OVERLAP};
use imvulog::examine::{carve_path, examine_paths, ExamineError, ExamineOptions};
use imvulog::generator::{render_corpus, simulate, write_manifest, GeneratorError, SimulationScript, MANIFEST_FILE_NAME};

const EXIT_OK: u8 = 0;
const EXIT_PARTIAL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "imvulog", version, about = "Examine, carve and synthesise IMVU client logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// JSON report with a schema version.
    Machine,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct sessions and artifacts from log files or directories.
    Examine {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Report file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "machine")]
        format: Format,
        /// Examiner-supplied case label recorded in the report.
        #[arg(long)]
        case_label: Option<String>,
    },
    /// Recover log records and SQLite headers from a raw image.
    Carve {
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_SCORE)]
        min_score: f64,
        #[arg(long, default_value_t = DEFAULT_CHUNK_BYTES)]
        chunk_bytes: usize,
        #[arg(long, default_value_t = DEFAULT_OVERLAP)]
        overlap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "machine")]
        format: Format,
    },
    /// Write a synthetic log corpus and its ground-truth manifest.
    Generate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rotation threshold; the script's value when omitted.
        #[arg(long)]
        rotate_bytes: Option<u64>,
        /// Seed; the script's value when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), u8> {
    let result = match out {
        Some(path) => fs::write(path, body),
        None => io::stdout().write_all(body.as_bytes()),
    };
    result.map_err(|e| {
        eprintln!("imvulog: cannot write report: {e}");
        EXIT_IO
    })
}

fn examine_error(e: ExamineError) -> u8 {
    eprintln!("imvulog: {e}");
    match e {
        ExamineError::Io { .. } => EXIT_IO,
        ExamineError::Carve(imvulog::carver::CarveError::IoFailure { .. }) => EXIT_IO,
        ExamineError::Carve(_) => EXIT_USAGE,
    }
}

fn run(cli: Cli) -> Result<u8, u8> {
    match cli.command {
        Command::Examine { paths, out, format, case_label } => {
            let opts = ExamineOptions { case_label, ..Default::default() };
            let outcome = examine_paths(&paths, &opts).map_err(examine_error)?;
            let body = match format {
                Format::Machine => outcome.report.to_json(),
                Format::Text => outcome.report.render_text(),
            };
            emit(out.as_deref(), &body)?;
            if outcome.is_complete() {
                Ok(EXIT_OK)
            } else {
                eprintln!("imvulog: some inputs were not parsed or no session was found");
                Ok(EXIT_PARTIAL)
            }
        }
        Command::Carve { image, min_score, chunk_bytes, overlap, out, format } => {
            let config = ScanConfig { chunk_bytes, overlap, min_score };
            let report = carve_path(&image, &config).map_err(examine_error)?;
            let body = match format {
                Format::Machine => report.to_json(),
                Format::Text => report.render_text(),
            };
            emit(out.as_deref(), &body)?;
            Ok(EXIT_OK)
        }
        Command::Generate { script, out, rotate_bytes, seed } => {
            let text = fs::read_to_string(&script).map_err(|e| {
                eprintln!("imvulog: {}: {e}", script.display());
                EXIT_IO
            })?;
            let generator_error = |e: GeneratorError| {
                eprintln!("imvulog: {e}");
                match e {
                    GeneratorError::InvalidScript(_) | GeneratorError::Overflow { .. } => EXIT_USAGE,
                    GeneratorError::Io(_) | GeneratorError::Json(_) => EXIT_IO,
                }
            };
            let script = SimulationScript::from_json(&text).map_err(generator_error)?;
            let seed = seed.unwrap_or(script.seed);
            let threshold = rotate_bytes.unwrap_or(script.rotation_threshold);
            if threshold == 0 {
                eprintln!("imvulog: --rotate-bytes must be positive");
                return Err(EXIT_USAGE);
            }
            let (session, mut manifest) = simulate(&script, seed).map_err(generator_error)?;
            render_corpus(&script, &session, &mut manifest, &out, threshold).map_err(generator_error)?;
            let manifest_path = out.join(MANIFEST_FILE_NAME);
            write_manifest(&manifest, &manifest_path).map_err(generator_error)?;
            println!("{}", manifest_path.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli).unwrap_or_else(|code| code))
}
