//! Blueprint generation under the adaptive rejection gate.
//!
//! Tick `t` (1-based) belongs to agent `t - 1 mod K` and draws all of its
//! randomness from the stream `(seed, "phase1", t)`, so a candidate depends
//! only on the tick and on that agent's memory. This makes batches of up to
//! `K` consecutive ticks independent: throughput mode generates them in
//! parallel and commits them in tick order, yielding the same run as the
//! sequential loop.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::config::{RunConfig, RunInputs};
use super::PipelineError;
use crate::actions::{
    apply_chain, assemble_blueprint, generate_description, sample_intent, sample_operator_chain, ForgeryBlueprint,
    GateRecord,
};
use crate::ars::{fuse_score, ArsState, CandidateScore, Evaluation, TraceRow};
use crate::backends::{Backends, CognitionRequest, CognitionTask, DetectorRequest};
use crate::memory::{MemoryKind, MemoryStore};
use crate::profile::AgentProfile;
use crate::rational::Rational;
use crate::rng;

/// Evaluations shown to the agent when it scores its own candidate.
const SELF_SCORE_HISTORY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1State {
    pub ticks_done: u64,
    pub ars: ArsState,
    pub memory: MemoryStore,
    /// Accepted blueprints in tick order.
    pub blueprints: Vec<ForgeryBlueprint>,
    pub trace: Vec<TraceRow>,
    pub agent_iterations: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tick: u64,
    pub blueprint: ForgeryBlueprint,
    pub score: CandidateScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase1Status {
    Completed,
    /// Stopped early on request after this many ticks.
    Halted {
        tick: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapStats {
    pub attempts: u64,
    pub accepted: u64,
    pub target: u64,
    pub acceptance_rate: f64,
    pub tau: Rational,
}

pub struct Phase1Runner<'a> {
    cfg: &'a RunConfig,
    inputs: &'a RunInputs,
    backends: &'a Backends,
    state: Phase1State,
}

impl<'a> Phase1Runner<'a> {
    pub fn new(cfg: &'a RunConfig, inputs: &'a RunInputs, backends: &'a Backends) -> Self {
        let mut memory = MemoryStore::new();
        for p in &inputs.profiles {
            memory.agent_mut(&p.agent_id);
        }
        let state = Phase1State {
            ticks_done: 0,
            ars: ArsState::new(&cfg.ars),
            memory,
            blueprints: Vec::new(),
            trace: Vec::new(),
            agent_iterations: BTreeMap::new(),
        };
        Phase1Runner {
            cfg,
            inputs,
            backends,
            state,
        }
    }

    /// Continues from a saved state, which must come from the same configuration.
    pub fn with_state(cfg: &'a RunConfig, inputs: &'a RunInputs, backends: &'a Backends, state: Phase1State) -> Self {
        Phase1Runner {
            cfg,
            inputs,
            backends,
            state,
        }
    }

    pub fn state(&self) -> &Phase1State {
        &self.state
    }

    pub fn into_state(self) -> Phase1State {
        self.state
    }

    pub fn accepted(&self) -> u64 {
        self.state.blueprints.len() as u64
    }

    pub fn is_complete(&self) -> bool {
        self.accepted() >= self.cfg.targets.forged
    }

    pub fn agent_for_tick(&self, tick: u64) -> &AgentProfile {
        let k = self.inputs.profiles.len() as u64;
        &self.inputs.profiles[((tick - 1) % k) as usize]
    }

    /// Builds, edits, describes and scores the candidate for `tick` without
    /// touching any state.
    pub fn candidate(&self, tick: u64) -> Result<Candidate, PipelineError> {
        let cfg = self.cfg;
        let profile = self.agent_for_tick(tick);
        let agent = profile.agent_id.as_str();
        let mut rng = rng::stream(cfg.seed, "phase1", &tick.to_string());

        let pool = &self.inputs.real_pool;
        let source = &pool[rng.random_range(0..pool.len())];
        let recent = self
            .state
            .memory
            .retrieve(agent, Some(MemoryKind::Evaluative), cfg.chain.memory_lookback);
        let chain = sample_operator_chain(
            profile,
            &self.inputs.toolbox,
            &cfg.weighting,
            &recent,
            &cfg.chain,
            &mut rng,
        )?;
        let result = apply_chain(
            source,
            &chain,
            &self.inputs.toolbox,
            cfg.chain.max_len(),
            self.backends.edit.as_ref(),
        )?;
        let intent = sample_intent(cfg.chain.misleading_probability, &mut rng);
        let description = generate_description(&result, &chain, intent, agent, self.backends.cognition.as_ref())?;

        let history: Vec<Value> = recent
            .iter()
            .take(SELF_SCORE_HISTORY)
            .map(|r| {
                json!({
                    "fused": r.payload.get("fused"),
                    "decision": r.payload.get("decision"),
                })
            })
            .collect();
        let guidance = self.state.memory.agent(agent).and_then(|m| m.latest_guidance());
        let request = CognitionRequest::new(
            CognitionTask::SelfScore,
            json!({
                "agent_id": agent,
                "image_ref": result,
                "description": description,
                "chain": chain.summary(),
                "recent_evaluations": history,
                "guidance": guidance,
            }),
        );
        let s_llm = self
            .backends
            .cognition
            .call(&request)?
            .score
            .expect("validated self-score carries a score");
        let s_disc = self
            .backends
            .detector
            .call(&DetectorRequest {
                image_ref: result.clone(),
            })?
            .forgery_confidence;
        let score = fuse_score(s_llm, s_disc, &cfg.ars).map_err(|e| PipelineError::Config(e.to_string()))?;
        let blueprint = assemble_blueprint(source, &result, chain, description, intent, agent, tick);
        Ok(Candidate { tick, blueprint, score })
    }

    /// Gates a candidate, records the attempt in the agent's memory and
    /// triggers a reflection every `reflection_every` iterations of that agent.
    pub fn commit(&mut self, candidate: Candidate) -> Result<Evaluation, PipelineError> {
        let Candidate {
            tick,
            mut blueprint,
            score,
        } = candidate;
        debug_assert_eq!(tick, self.state.ticks_done + 1, "candidates commit in tick order");
        let evaluation = self.state.ars.evaluate(score.fused, &self.cfg.ars);
        self.state.trace.push(TraceRow::from(&evaluation));
        self.state.ticks_done = tick;

        let agent = blueprint.agent_id.clone();
        let steps = serde_json::to_value(&blueprint.action.chain.steps).expect("chain serializes");
        let factual = as_map(json!({
            "blueprint_id": blueprint.blueprint_id,
            "source_image_ref": blueprint.source_image_ref,
            "result_image_ref": blueprint.result_image_ref,
            "chain": steps,
            "intent": blueprint.action.intent.label(),
            "description": blueprint.action.description,
        }));
        let mut evaluative = as_map(json!({
            "blueprint_id": blueprint.blueprint_id,
            "s_llm": score.s_llm,
            "s_disc": score.s_disc,
            "fused": score.fused,
            "tau": evaluation.tau_in_force,
            "phase": evaluation.phase,
            "decision": evaluation.decision,
            "is_challenge": evaluation.is_challenge,
        }));
        if evaluation.accepted() {
            let mut preferred = Map::new();
            for step in &blueprint.action.chain.steps {
                preferred.insert(
                    step.op_id.clone(),
                    serde_json::to_value(&step.params).expect("params serialize"),
                );
            }
            evaluative.insert("preferred_params".into(), Value::Object(preferred));
        }
        let memory = &mut self.state.memory;
        memory.write(&agent, MemoryKind::Factual, factual, tick)?;
        memory.write(&agent, MemoryKind::Evaluative, evaluative, tick)?;

        let iterations = self.state.agent_iterations.entry(agent.clone()).or_insert(0);
        *iterations += 1;
        if (*iterations).is_multiple_of(self.cfg.reflection_every) {
            let mem = memory.agent_mut(&agent);
            let covered = mem.reflections().last().map_or(0, |r| r.covering_range.1);
            let window = (mem.last_seq() - covered) as usize;
            mem.reflect(window, tick, self.backends.cognition.as_ref())?;
        }

        if evaluation.accepted() {
            blueprint.gate = Some(GateRecord {
                score,
                tau_in_force: evaluation.tau_in_force,
                is_challenge: evaluation.is_challenge,
            });
            self.state.blueprints.push(blueprint);
        }
        Ok(evaluation)
    }

    fn cap_stats(&self) -> CapStats {
        CapStats {
            attempts: self.state.ticks_done,
            accepted: self.accepted(),
            target: self.cfg.targets.forged,
            acceptance_rate: self.state.ars.acceptance_rate(),
            tau: self.state.ars.tau(),
        }
    }

    /// Runs until the target is met, `halt_after` ticks have been processed,
    /// or the iteration cap is hit. `on_checkpoint` sees the state after every
    /// `checkpoint_every` ticks.
    pub fn run(
        &mut self,
        halt_after: Option<u64>,
        mut on_checkpoint: impl FnMut(&Phase1State) -> Result<(), PipelineError>,
    ) -> Result<Phase1Status, PipelineError> {
        let cap = self.cfg.iteration_cap();
        let batch = if self.cfg.deterministic {
            1
        } else {
            self.inputs.profiles.len().max(1) as u64
        };
        loop {
            if self.is_complete() {
                return Ok(Phase1Status::Completed);
            }
            let done = self.state.ticks_done;
            if let Some(h) = halt_after.filter(|h| done >= *h) {
                return Ok(Phase1Status::Halted { tick: h.min(done) });
            }
            if done >= cap {
                return Err(PipelineError::IterationCapExceeded(self.cap_stats()));
            }
            let mut end = (done + batch).min(cap);
            if let Some(h) = halt_after {
                end = end.min(h);
            }
            let candidates: Vec<Result<Candidate, PipelineError>> = if batch == 1 {
                vec![self.candidate(done + 1)]
            } else {
                ((done + 1)..=end).into_par_iter().map(|t| self.candidate(t)).collect()
            };
            for candidate in candidates {
                self.commit(candidate?)?;
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.state.ticks_done.is_multiple_of(every) {
                    on_checkpoint(&self.state)?;
                }
                if self.is_complete() {
                    break;
                }
            }
        }
    }
}

fn as_map(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("payloads are built as objects"),
    }
}
