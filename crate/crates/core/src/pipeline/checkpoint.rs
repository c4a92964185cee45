//! Phase-1 checkpoints.
//!
//! Line 1 is `forgesim-checkpoint/1 sha256=<hex>`; the remainder is a JSON
//! body whose digest must match. Because every tick draws from its own keyed
//! stream, the generator position is fully described by the next tick.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::phase1::Phase1State;
use super::PipelineError;
use crate::rng::sha256_hex;

pub const CHECKPOINT_FORMAT: &str = "forgesim-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub config_digest: String,
    /// Ticks processed so far.
    pub tick: u64,
    /// Key of the stream the next tick will draw from.
    pub next_stream_key: u64,
    /// Records written per agent.
    pub memory_offsets: BTreeMap<String, u64>,
    /// Blueprints accepted so far.
    pub emitted: u64,
    pub state: Phase1State,
}

impl Checkpoint {
    pub fn capture(seed: u64, config_digest: &str, state: &Phase1State) -> Self {
        Checkpoint {
            seed,
            config_digest: config_digest.to_string(),
            tick: state.ticks_done,
            next_stream_key: state.ticks_done + 1,
            memory_offsets: state.memory.offsets(),
            emitted: state.blueprints.len() as u64,
            state: state.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("checkpoint serializes");
        let mut out = format!("{CHECKPOINT_FORMAT} sha256={}\n", sha256_hex(&body)).into_bytes();
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let corrupt = |m: &str| PipelineError::CorruptCheckpoint(m.to_string());
        let split = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| corrupt("missing header line"))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("header is not text"))?;
        let body = &bytes[split + 1..];
        let digest = header
            .strip_prefix(CHECKPOINT_FORMAT)
            .and_then(|rest| rest.trim().strip_prefix("sha256="))
            .ok_or_else(|| corrupt("unrecognized header"))?;
        if digest != sha256_hex(body) {
            return Err(corrupt("body digest does not match header"));
        }
        let ckpt: Checkpoint =
            serde_json::from_slice(body).map_err(|e| PipelineError::CorruptCheckpoint(e.to_string()))?;
        ckpt.check_consistency()?;
        Ok(ckpt)
    }

    fn check_consistency(&self) -> Result<(), PipelineError> {
        let s = &self.state;
        let ok = self.tick == s.ticks_done
            && self.next_stream_key == s.ticks_done + 1
            && self.emitted == s.blueprints.len() as u64
            && s.trace.len() as u64 == s.ticks_done
            && s.ars.n_seen() == s.ticks_done
            && self.memory_offsets == s.memory.offsets();
        if ok {
            Ok(())
        } else {
            Err(PipelineError::CorruptCheckpoint(
                "counters disagree with the saved state".into(),
            ))
        }
    }

    /// Rejects checkpoints taken under a different seed or configuration.
    pub fn check_matches(&self, seed: u64, config_digest: &str) -> Result<(), PipelineError> {
        if self.seed != seed || self.config_digest != config_digest {
            return Err(PipelineError::CorruptCheckpoint(
                "checkpoint was written by a different configuration".into(),
            ));
        }
        Ok(())
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
