//! Append-only per-agent memory.
//!
//! Factual records hold what an agent did; evaluative records hold how it was
//! judged. Periodic reflection condenses a window of records into guidance via
//! the cognition backend. Logs persist as one JSON record per line.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::backends::{BackendError, CognitionBackend, CognitionRequest, CognitionTask};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("memory payload must be a non-empty object")]
    EmptyPayload,
    #[error("agent {0:?} has no records to reflect on")]
    InsufficientData(String),
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
    #[error("memory storage failure: {0}")]
    StorageFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Factual,
    Evaluative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub seq: u64,
    pub agent_id: String,
    pub kind: MemoryKind,
    pub tick: u64,
    pub payload: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionSummary {
    pub agent_id: String,
    /// Inclusive `(seq_from, seq_to)`.
    pub covering_range: (u64, u64),
    pub guidance_text: String,
    pub produced_at: u64,
}

/// One agent's log. Sequence numbers start at 1 and have no gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentMemory {
    agent_id: String,
    records: Vec<MemoryRecord>,
    reflections: Vec<ReflectionSummary>,
}

impl AgentMemory {
    pub fn new(agent_id: &str) -> Self {
        AgentMemory {
            agent_id: agent_id.to_string(),
            ..AgentMemory::default()
        }
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn reflections(&self) -> &[ReflectionSummary] {
        &self.reflections
    }

    pub fn last_seq(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn write(&mut self, kind: MemoryKind, payload: Map<String, Value>, tick: u64) -> Result<u64, MemoryError> {
        if payload.is_empty() {
            return Err(MemoryError::EmptyPayload);
        }
        let seq = self.last_seq() + 1;
        self.records.push(MemoryRecord {
            seq,
            agent_id: self.agent_id.clone(),
            kind,
            tick,
            payload,
        });
        Ok(seq)
    }

    /// Up to `last_n` records, newest first, optionally restricted to one kind.
    pub fn retrieve(&self, kind: Option<MemoryKind>, last_n: usize) -> Vec<MemoryRecord> {
        self.records
            .iter()
            .rev()
            .filter(|r| kind.is_none_or(|k| r.kind == k))
            .take(last_n)
            .cloned()
            .collect()
    }

    /// Summarizes the newest `window` records through the cognition backend
    /// and stores the summary.
    pub fn reflect(
        &mut self,
        window: usize,
        tick: u64,
        cognition: &dyn CognitionBackend,
    ) -> Result<ReflectionSummary, MemoryError> {
        let n = self.records.len();
        if window == 0 || n == 0 {
            return Err(MemoryError::InsufficientData(self.agent_id.clone()));
        }
        let slice = &self.records[n - window.min(n)..];
        let seq_from = slice[0].seq;
        let seq_to = slice[slice.len() - 1].seq;
        let payloads: Vec<Value> = slice
            .iter()
            .map(|r| json!({"seq": r.seq, "kind": r.kind, "tick": r.tick, "payload": r.payload}))
            .collect();
        let request = CognitionRequest::new(
            CognitionTask::Reflect,
            json!({
                "agent_id": self.agent_id,
                "seq_from": seq_from,
                "seq_to": seq_to,
                "payloads": payloads,
            }),
        );
        let guidance_text = cognition.call(&request)?.text;
        let summary = ReflectionSummary {
            agent_id: self.agent_id.clone(),
            covering_range: (seq_from, seq_to),
            guidance_text,
            produced_at: tick,
        };
        self.reflections.push(summary.clone());
        Ok(summary)
    }

    pub fn latest_guidance(&self) -> Option<&str> {
        self.reflections.last().map(|r| r.guidance_text.as_str())
    }
}

/// Memories of every agent in a run, keyed by agent id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryStore {
    agents: BTreeMap<String, AgentMemory>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }

    pub fn agent(&self, agent_id: &str) -> Option<&AgentMemory> {
        self.agents.get(agent_id)
    }

    pub fn agent_mut(&mut self, agent_id: &str) -> &mut AgentMemory {
        self.agents
            .entry(agent_id.to_string())
            .or_insert_with(|| AgentMemory::new(agent_id))
    }

    pub fn agents_mut(&mut self) -> impl Iterator<Item = &mut AgentMemory> {
        self.agents.values_mut()
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = &str> {
        self.agents.keys().map(String::as_str)
    }

    pub fn write(
        &mut self,
        agent_id: &str,
        kind: MemoryKind,
        payload: Map<String, Value>,
        tick: u64,
    ) -> Result<u64, MemoryError> {
        self.agent_mut(agent_id).write(kind, payload, tick)
    }

    pub fn retrieve(&self, agent_id: &str, kind: Option<MemoryKind>, last_n: usize) -> Vec<MemoryRecord> {
        self.agents
            .get(agent_id)
            .map(|m| m.retrieve(kind, last_n))
            .unwrap_or_default()
    }

    pub fn reflect(
        &mut self,
        agent_id: &str,
        window: usize,
        tick: u64,
        cognition: &dyn CognitionBackend,
    ) -> Result<ReflectionSummary, MemoryError> {
        match self.agents.get_mut(agent_id) {
            Some(m) => m.reflect(window, tick, cognition),
            None => Err(MemoryError::InsufficientData(agent_id.to_string())),
        }
    }

    pub fn reflections(&self, agent_id: &str) -> &[ReflectionSummary] {
        self.agents.get(agent_id).map_or(&[], |m| m.reflections())
    }

    /// Record count per agent.
    pub fn offsets(&self) -> BTreeMap<String, u64> {
        self.agents.iter().map(|(k, m)| (k.clone(), m.last_seq())).collect()
    }

    /// Writes every record, one JSON object per line, ordered by agent then seq.
    pub fn write_log<W: Write>(&self, mut writer: W) -> Result<(), MemoryError> {
        let storage = |e: std::io::Error| MemoryError::StorageFailure(e.to_string());
        for m in self.agents.values() {
            for r in &m.records {
                serde_json::to_writer(&mut writer, r).map_err(|e| MemoryError::StorageFailure(e.to_string()))?;
                writer.write_all(b"\n").map_err(storage)?;
            }
        }
        writer.flush().map_err(storage)
    }

    pub fn write_reflections<W: Write>(&self, mut writer: W) -> Result<(), MemoryError> {
        let storage = |e: std::io::Error| MemoryError::StorageFailure(e.to_string());
        for m in self.agents.values() {
            for r in &m.reflections {
                serde_json::to_writer(&mut writer, r).map_err(|e| MemoryError::StorageFailure(e.to_string()))?;
                writer.write_all(b"\n").map_err(storage)?;
            }
        }
        writer.flush().map_err(storage)
    }

    /// Rebuilds a store from a record log and (optionally) a reflection log.
    /// Rejects logs whose per-agent sequence numbers are not `1, 2, 3, ...`.
    pub fn load<R: Read, S: Read>(log: R, reflections: Option<S>) -> Result<Self, MemoryError> {
        let mut store = MemoryStore::new();
        for (i, line) in BufReader::new(log).lines().enumerate() {
            let line = line.map_err(|e| MemoryError::StorageFailure(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: MemoryRecord =
                serde_json::from_str(&line).map_err(|e| MemoryError::StorageFailure(format!("line {}: {e}", i + 1)))?;
            let mem = store.agent_mut(&record.agent_id);
            if record.seq != mem.last_seq() + 1 {
                return Err(MemoryError::StorageFailure(format!(
                    "line {}: seq {} breaks the sequence for {}",
                    i + 1,
                    record.seq,
                    record.agent_id
                )));
            }
            mem.records.push(record);
        }
        if let Some(reader) = reflections {
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let line = line.map_err(|e| MemoryError::StorageFailure(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let summary: ReflectionSummary = serde_json::from_str(&line)
                    .map_err(|e| MemoryError::StorageFailure(format!("reflection line {}: {e}", i + 1)))?;
                let mem = store.agent_mut(&summary.agent_id);
                let (from, to) = summary.covering_range;
                if from == 0 || from > to || to > mem.last_seq() {
                    return Err(MemoryError::StorageFailure(format!(
                        "reflection line {}: range {from}..={to} outside written records",
                        i + 1
                    )));
                }
                mem.reflections.push(summary);
            }
        }
        Ok(store)
    }
}
