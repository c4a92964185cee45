//! The on-disk stages behind `generate`, `socialize` and `emit`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::{RunConfig, RunInputs};
use super::phase1::{Phase1Runner, Phase1State, Phase1Status};
use super::phase2::{caption_real_images, socialize_blueprints, SocialOutput};
use super::PipelineError;
use crate::actions::ForgeryBlueprint;
use crate::ars::write_trace;
use crate::backends::Backends;
use crate::manifest::{DatasetManifest, DatasetSample};
use crate::rational::Rational;

pub const BLUEPRINTS_FILE: &str = "blueprints.jsonl";
pub const MEMORY_FILE: &str = "memory.jsonl";
pub const REFLECTIONS_FILE: &str = "reflections.jsonl";
pub const TRACE_FILE: &str = "ars_trace.csv";
pub const CHECKPOINT_FILE: &str = "phase1.ckpt";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const SOCIAL_SAMPLES_FILE: &str = "social_samples.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerateOptions {
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop after this many ticks and write a checkpoint.
    pub halt_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub status: Phase1Status,
    pub attempts: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub tau: Rational,
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| PipelineError::io(path, e))?;
        w.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::io(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| PipelineError::io(&cfg.output_dir, e))
}

fn write_phase1_outputs(cfg: &RunConfig, state: &Phase1State) -> Result<(), PipelineError> {
    write_jsonl(&cfg.path(BLUEPRINTS_FILE), &state.blueprints)?;
    let path = cfg.path(MEMORY_FILE);
    state.memory.write_log(create(&path)?)?;
    let path = cfg.path(REFLECTIONS_FILE);
    state.memory.write_reflections(create(&path)?)?;
    let path = cfg.path(TRACE_FILE);
    write_trace(&state.trace, create(&path)?).map_err(|e| PipelineError::io(&path, e))
}

/// Phase 1. On completion writes blueprints, memory, reflections, the
/// threshold trace and a final checkpoint. A halted run writes only the
/// checkpoint. When the iteration cap is hit the logs are still written
/// before the error is returned.
pub fn generate(
    cfg: &RunConfig,
    inputs: &RunInputs,
    backends: &Backends,
    opts: &GenerateOptions,
) -> Result<GenerateReport, PipelineError> {
    ensure_output_dir(cfg)?;
    let digest = inputs.config_digest.as_str();
    let mut runner = match &opts.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.check_matches(cfg.seed, digest)?;
            Phase1Runner::with_state(cfg, inputs, backends, ckpt.state)
        }
        None => Phase1Runner::new(cfg, inputs, backends),
    };
    let ckpt_path = cfg.path(CHECKPOINT_FILE);
    let outcome = runner.run(opts.halt_after, |state| {
        Checkpoint::capture(cfg.seed, digest, state).save(&ckpt_path)
    });
    let state = runner.state();
    Checkpoint::capture(cfg.seed, digest, state).save(&ckpt_path)?;
    let status = match outcome {
        Ok(status) => status,
        Err(e @ PipelineError::IterationCapExceeded(_)) => {
            write_phase1_outputs(cfg, state)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    if status == Phase1Status::Completed {
        write_phase1_outputs(cfg, state)?;
    }
    log::info!(
        "phase 1 {:?}: {} accepted of {} attempts, tau {}",
        status,
        runner.accepted(),
        state.ticks_done,
        state.ars.tau()
    );
    Ok(GenerateReport {
        status,
        attempts: state.ticks_done,
        accepted: runner.accepted(),
        acceptance_rate: state.ars.acceptance_rate(),
        tau: state.ars.tau(),
    })
}

fn write_social_outputs(cfg: &RunConfig, out: &SocialOutput) -> Result<(), PipelineError> {
    write_jsonl(
        &cfg.path(TRAJECTORIES_FILE),
        out.trajectories.iter().flat_map(|t| t.events.iter()),
    )?;
    write_jsonl(&cfg.path(SOCIAL_SAMPLES_FILE), &out.samples)
}

/// Phase 2 over the blueprints written by [`generate`].
pub fn socialize(cfg: &RunConfig, backends: &Backends) -> Result<SocialOutput, PipelineError> {
    cfg.social.validate()?;
    let blueprints: Vec<ForgeryBlueprint> = read_jsonl(&cfg.path(BLUEPRINTS_FILE))?;
    let out = socialize_blueprints(&blueprints, &cfg.social, backends.cognition.as_ref(), cfg.seed)?;
    write_social_outputs(cfg, &out)?;
    Ok(out)
}

pub fn tool_versions(backends: &Backends) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("forgesim".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("backends".to_string(), backends.label.clone()),
    ])
}

/// Captions `targets.real` real images, merges them with the social samples
/// and writes the manifest.
pub fn emit(cfg: &RunConfig, inputs: &RunInputs, backends: &Backends) -> Result<DatasetManifest, PipelineError> {
    ensure_output_dir(cfg)?;
    let social_path = cfg.path(SOCIAL_SAMPLES_FILE);
    let mut samples: Vec<DatasetSample> = if social_path.exists() {
        read_jsonl(&social_path)?
    } else if cfg.targets.forged == 0 {
        Vec::new()
    } else {
        return Err(PipelineError::Config(format!(
            "{} not found; run socialize first",
            social_path.display()
        )));
    };
    samples.extend(caption_real_images(
        &inputs.real_pool,
        cfg.targets.real as usize,
        backends.cognition.as_ref(),
    )?);
    let manifest = DatasetManifest::new(cfg.seed, inputs.config_digest.clone(), tool_versions(backends), samples);
    let path = cfg.path(MANIFEST_FILE);
    manifest.write(create(&path)?)?;
    Ok(manifest)
}

/// All three stages. A run with no accepted blueprints skips the social stage.
pub fn run_all(cfg: &RunConfig, inputs: &RunInputs, backends: &Backends) -> Result<DatasetManifest, PipelineError> {
    generate(cfg, inputs, backends, &GenerateOptions::default())?;
    if cfg.targets.forged == 0 {
        write_social_outputs(cfg, &SocialOutput::default())?;
    } else {
        socialize(cfg, backends)?;
    }
    emit(cfg, inputs, backends)
}
