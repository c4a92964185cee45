//! Adaptive rejection sampling gate.
//!
//! Candidates carry two scores in `[0, 1]`: the generating agent's own quality
//! assessment and an external detector's confidence. The gate fuses them into
//! `lambda * s_llm + (1 - lambda) * s_disc` and accepts a candidate when the
//! fused score is strictly greater than the threshold in force. The first
//! `n_warmup` candidates face a fixed lenient threshold; afterwards the
//! threshold is the nearest-rank `q`-quantile of every accepted score,
//! recomputed after each `update_period` acceptances.
//!
//! Because every accepted score exceeds the threshold that admitted it, adding
//! it to the pool can never lower the nearest-rank quantile, so the adaptive
//! threshold is non-decreasing.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArsError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: Rational },
    #[error("quantile of an empty set")]
    EmptySet,
    #[error("invalid gate configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArsConfig {
    #[serde(default = "half")]
    pub lambda: Rational,
    #[serde(default = "half")]
    pub q: Rational,
    #[serde(default = "default_n_warmup")]
    pub n_warmup: u64,
    #[serde(default = "default_tau_warmup")]
    pub tau_warmup: Rational,
    /// Threshold recompute cadence, counted in accepted samples.
    #[serde(default = "default_update_period")]
    pub update_period: u64,
    /// Width of the band `[tau, tau + margin)` flagged as challenge samples.
    #[serde(default = "default_challenge_margin")]
    pub challenge_margin: Rational,
}

fn half() -> Rational {
    Rational::new(1, 2)
}
fn default_n_warmup() -> u64 {
    50
}
fn default_tau_warmup() -> Rational {
    Rational::new(3, 10)
}
fn default_update_period() -> u64 {
    10
}
fn default_challenge_margin() -> Rational {
    Rational::new(1, 10)
}

impl Default for ArsConfig {
    fn default() -> Self {
        ArsConfig {
            lambda: half(),
            q: half(),
            n_warmup: default_n_warmup(),
            tau_warmup: default_tau_warmup(),
            update_period: default_update_period(),
            challenge_margin: default_challenge_margin(),
        }
    }
}

impl ArsConfig {
    pub fn validate(&self) -> Result<(), ArsError> {
        for (name, value) in [
            ("lambda", self.lambda),
            ("q", self.q),
            ("tau_warmup", self.tau_warmup),
            ("challenge_margin", self.challenge_margin),
        ] {
            if !value.is_unit_interval() {
                return Err(ArsError::OutOfRange { name, value });
            }
        }
        if self.n_warmup == 0 {
            return Err(ArsError::InvalidConfig("n_warmup must be positive".into()));
        }
        if self.update_period == 0 {
            return Err(ArsError::InvalidConfig("update_period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub s_llm: Rational,
    pub s_disc: Rational,
    pub fused: Rational,
}

/// Exact convex combination of the agent and detector scores.
pub fn fuse_score(s_llm: Rational, s_disc: Rational, cfg: &ArsConfig) -> Result<CandidateScore, ArsError> {
    for (name, value) in [("s_llm", s_llm), ("s_disc", s_disc), ("lambda", cfg.lambda)] {
        if !value.is_unit_interval() {
            return Err(ArsError::OutOfRange { name, value });
        }
    }
    let fused = cfg.lambda * s_llm + (Rational::one() - cfg.lambda) * s_disc;
    Ok(CandidateScore { s_llm, s_disc, fused })
}

/// Nearest-rank quantile: the element at 1-based rank `max(1, ceil(q * n))`
/// of the ascending order.
pub fn quantile(values: &[Rational], q: Rational) -> Result<Rational, ArsError> {
    if values.is_empty() {
        return Err(ArsError::EmptySet);
    }
    if !q.is_unit_interval() {
        return Err(ArsError::OutOfRange { name: "q", value: q });
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Ok(sorted[nearest_rank(sorted.len(), q) - 1])
}

fn nearest_rank(n: usize, q: Rational) -> usize {
    let rank = (q * Rational::from_integer(n as i128)).ceil_integer();
    rank.clamp(1, n as i128) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub decision: Decision,
    /// 1-based index of the evaluated candidate.
    pub n_seen: u64,
    pub phase: Phase,
    pub tau_in_force: Rational,
    pub is_challenge: bool,
}

impl Evaluation {
    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArsState {
    /// Accepted fused scores, kept in ascending order.
    accepted_scores: Vec<Rational>,
    n_seen: u64,
    tau: Rational,
    phase: Phase,
    accepted_since_update: u64,
}

impl ArsState {
    pub fn new(cfg: &ArsConfig) -> Self {
        ArsState {
            accepted_scores: Vec::new(),
            n_seen: 0,
            tau: cfg.tau_warmup,
            phase: Phase::Warmup,
            accepted_since_update: 0,
        }
    }

    pub fn accepted_scores(&self) -> &[Rational] {
        &self.accepted_scores
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted_scores.len()
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn tau(&self) -> Rational {
        self.tau
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.n_seen == 0 {
            0.0
        } else {
            self.accepted_scores.len() as f64 / self.n_seen as f64
        }
    }

    fn recompute(&mut self, cfg: &ArsConfig) {
        if !self.accepted_scores.is_empty() {
            let rank = nearest_rank(self.accepted_scores.len(), cfg.q);
            self.tau = self.accepted_scores[rank - 1];
        }
        self.accepted_since_update = 0;
    }

    /// Gates one fused score and updates the state.
    pub fn evaluate(&mut self, fused: Rational, cfg: &ArsConfig) -> Evaluation {
        self.n_seen += 1;
        let tau_in_force = if self.n_seen <= cfg.n_warmup {
            self.phase = Phase::Warmup;
            cfg.tau_warmup
        } else {
            if self.phase == Phase::Warmup {
                // First adaptive candidate: seed tau from the warm-up pool.
                // With an empty pool the warm-up threshold stays in force.
                self.phase = Phase::Adaptive;
                self.tau = cfg.tau_warmup;
                self.recompute(cfg);
            }
            self.tau
        };
        let decision = if fused > tau_in_force {
            Decision::Accept
        } else {
            Decision::Reject
        };
        if decision == Decision::Accept {
            let at = self.accepted_scores.partition_point(|s| *s <= fused);
            self.accepted_scores.insert(at, fused);
            if self.phase == Phase::Adaptive {
                self.accepted_since_update += 1;
                if self.accepted_since_update >= cfg.update_period {
                    self.recompute(cfg);
                }
            }
        }
        let is_challenge = fused >= tau_in_force && fused < tau_in_force + cfg.challenge_margin;
        Evaluation {
            decision,
            n_seen: self.n_seen,
            phase: self.phase,
            tau_in_force,
            is_challenge,
        }
    }
}

/// One row of the threshold trace export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n_seen: u64,
    pub phase: Phase,
    pub tau: Rational,
    pub decision: Decision,
}

impl From<&Evaluation> for TraceRow {
    fn from(e: &Evaluation) -> Self {
        TraceRow {
            n_seen: e.n_seen,
            phase: e.phase,
            tau: e.tau_in_force,
            decision: e.decision,
        }
    }
}

/// Writes the trace as comma-separated rows with header `n_seen,phase,tau,decision`.
pub fn write_trace<W: Write>(rows: &[TraceRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}
