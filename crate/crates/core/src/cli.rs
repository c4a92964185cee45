//! Command-line front end.
//!
//! Exit codes: 0 success, 2 bad arguments, configuration or input,
//! 3 backend failure, 4 iteration cap reached.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::ars::{read_trace, Decision, Phase};
use crate::backends::{make_stub, BackendConfig, CognitionBackend, HttpBackend};
use crate::manifest::DatasetManifest;
use crate::pipeline::{self, GenerateOptions, Phase1Status, PipelineError, RunConfig, RunInputs};
use crate::profile::{self, ProfileConfig};
use crate::social::Role;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_CAP: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "forgesim", version, about = "Agent-driven face-forgery dataset simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Use the seeded stub backends even if endpoints are configured.
    #[arg(long)]
    pub stub_backends: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatsFormat {
    Text,
    Tsv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build agent profiles from a creator metadata table (CSV or JSONL).
    ProfileExtract {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Records shown to the cognition backend per creator.
        #[arg(long, default_value_t = 5)]
        style_sample: usize,
        /// Cognition endpoint; the seeded stub is used when absent.
        #[arg(long)]
        cognition_url: Option<String>,
    },
    /// Generate blueprints under the adaptive gate.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many iterations and write a checkpoint.
        #[arg(long)]
        halt_after: Option<u64>,
    },
    /// Simulate social interaction around the generated blueprints.
    Socialize {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Caption real images and write the dataset manifest.
    Emit {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate, socialize and emit in one go.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summarize a manifest and, optionally, a threshold trace.
    Stats {
        /// Manifest written by `emit`
        #[arg(long)]
        manifest: PathBuf,
        /// Threshold trace (ars_trace.csv) to summarize alongside
        #[arg(long)]
        ars_trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StatsFormat::Text)]
        format: StatsFormat,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_run(args: &RunArgs) -> Result<(RunConfig, pipeline::RunInputs, crate::backends::Backends), PipelineError> {
    let cfg = RunConfig::load(&args.config)?;
    let backends = cfg.backends(args.stub_backends)?;
    let inputs = RunInputs::load(&cfg, &backends)?;
    Ok((cfg, inputs, backends))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::io(path, e)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), PipelineError> {
    let stdout = Path::new("<stdout>");
    match command {
        Command::ProfileExtract {
            metadata,
            out: out_path,
            seed,
            style_sample,
            cognition_url,
        } => {
            let records = profile::load_metadata(&metadata)?;
            let cognition: std::sync::Arc<dyn CognitionBackend> = match cognition_url {
                Some(url) => {
                    std::sync::Arc::new(HttpBackend::new(BackendConfig::new(url)).map_err(PipelineError::Config)?)
                }
                None => make_stub(seed),
            };
            let cfg = ProfileConfig {
                style_sample_size: style_sample,
                rng_seed: seed,
            };
            let profiles = profile::build_profiles(&records, &cfg, cognition.as_ref())?;
            let file = std::fs::File::create(&out_path).map_err(io_err(&out_path))?;
            profile::write_profiles(&profiles, std::io::BufWriter::new(file)).map_err(io_err(&out_path))?;
            writeln!(out, "wrote {} profiles to {}", profiles.len(), out_path.display()).map_err(io_err(stdout))?;
        }
        Command::Generate {
            run,
            resume,
            halt_after,
        } => {
            let (cfg, inputs, backends) = load_run(&run)?;
            let report = pipeline::generate(&cfg, &inputs, &backends, &GenerateOptions { resume, halt_after })?;
            let status = match report.status {
                Phase1Status::Completed => "completed".to_string(),
                Phase1Status::Halted { tick } => format!("halted after {tick} iterations"),
            };
            writeln!(
                out,
                "generate {status}: {} accepted of {} attempts (rate {:.4}, tau {})",
                report.accepted, report.attempts, report.acceptance_rate, report.tau
            )
            .map_err(io_err(stdout))?;
        }
        Command::Socialize { run } => {
            let cfg = RunConfig::load(&run.config)?;
            let backends = cfg.backends(run.stub_backends)?;
            let result = pipeline::socialize(&cfg, &backends)?;
            let events: usize = result.trajectories.iter().map(|t| t.events.len()).sum();
            writeln!(
                out,
                "socialize: {} trajectories, {events} events, {} samples",
                result.trajectories.len(),
                result.samples.len()
            )
            .map_err(io_err(stdout))?;
        }
        Command::Emit { run } => {
            let (cfg, inputs, backends) = load_run(&run)?;
            let manifest = pipeline::emit(&cfg, &inputs, &backends)?;
            print_emitted(out, &cfg, &manifest)?;
        }
        Command::Run { run } => {
            let (cfg, inputs, backends) = load_run(&run)?;
            let manifest = pipeline::run_all(&cfg, &inputs, &backends)?;
            print_emitted(out, &cfg, &manifest)?;
        }
        Command::Stats {
            manifest,
            ars_trace,
            format,
        } => {
            let file = std::fs::File::open(&manifest).map_err(io_err(&manifest))?;
            let m = DatasetManifest::read(std::io::BufReader::new(file))?;
            m.verify()?;
            let mut rows = manifest_stats(&m);
            if let Some(path) = ars_trace {
                let file = std::fs::File::open(&path).map_err(io_err(&path))?;
                let trace = read_trace(file).map_err(|e| PipelineError::io(&path, e))?;
                rows.extend(trace_stats(&trace));
            }
            for (k, v) in rows {
                match format {
                    StatsFormat::Text => writeln!(out, "{k}: {v}"),
                    StatsFormat::Tsv => writeln!(out, "{k}\t{v}"),
                }
                .map_err(io_err(stdout))?;
            }
        }
    }
    Ok(())
}

fn print_emitted(out: &mut dyn Write, cfg: &RunConfig, m: &DatasetManifest) -> Result<(), PipelineError> {
    let c = m.header.counts;
    writeln!(
        out,
        "emit: {} samples ({} real, {} forged, {} from interactions) -> {}",
        c.total,
        c.m_real,
        c.n_forged,
        c.n_interactions,
        cfg.path(pipeline::MANIFEST_FILE).display()
    )
    .map_err(|e| PipelineError::io(Path::new("<stdout>"), e))
}

fn ratio(num: u64, den: u64) -> String {
    if den == 0 {
        "n/a".into()
    } else {
        format!("{:.4}", num as f64 / den as f64)
    }
}

/// Key/value summary of a verified manifest.
pub fn manifest_stats(m: &DatasetManifest) -> Vec<(String, String)> {
    let c = m.header.counts;
    let mismatched = m.samples.iter().filter(|s| s.mismatch_flag == 1).count() as u64;
    let consistent = m.samples.iter().filter(|s| s.delta == 1).count() as u64;
    let mut rows = vec![
        ("seed".to_string(), m.header.seed.to_string()),
        ("config_digest".into(), m.header.config_digest.clone()),
        ("samples".into(), c.total.to_string()),
        ("real".into(), c.m_real.to_string()),
        ("forged".into(), c.n_forged.to_string()),
        ("blueprint_captions".into(), c.n_blueprints.to_string()),
        ("interaction_samples".into(), c.n_interactions.to_string()),
        ("forged_fraction".into(), ratio(c.n_forged, c.total)),
        ("delta_1".into(), consistent.to_string()),
        ("delta_0".into(), (c.total - consistent).to_string()),
        ("mismatched".into(), mismatched.to_string()),
        ("mismatch_rate".into(), ratio(mismatched, c.total)),
    ];
    for role in Role::ALL {
        let n = m.samples.iter().filter(|s| s.provenance.role == Some(role)).count();
        rows.push((format!("role.{}", role.name()), n.to_string()));
    }
    rows
}

pub fn trace_stats(trace: &[crate::ars::TraceRow]) -> Vec<(String, String)> {
    let attempts = trace.len() as u64;
    let accepted = trace.iter().filter(|r| r.decision == Decision::Accept).count() as u64;
    let warmup = trace.iter().filter(|r| r.phase == Phase::Warmup).count();
    let final_tau = trace.last().map_or_else(|| "n/a".to_string(), |r| r.tau.to_string());
    vec![
        ("attempts".into(), attempts.to_string()),
        ("accepted".into(), accepted.to_string()),
        ("acceptance_rate".into(), ratio(accepted, attempts)),
        ("warmup_attempts".into(), warmup.to_string()),
        ("final_tau".into(), final_tau),
    ]
}
