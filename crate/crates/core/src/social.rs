//! Social simulation: role agents react to accepted blueprints, the auditor
//! injects deceptive claims, and each text is labeled for text-image
//! consistency against the image's ground-truth authenticity.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::actions::ForgeryBlueprint;
use crate::backends::{BackendError, BackendKind, CognitionBackend, CognitionRequest, CognitionTask};
use crate::manifest::{DatasetSample, Provenance};
use crate::profile::tokens;
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum SocialError {
    #[error("role roster is empty")]
    EmptyRoster,
    #[error("cannot classify empty text")]
    EmptyText,
    #[error("invalid social configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
}

/// Declaration order is the fixed in-round speaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Watcher,
    Explorer,
    Critic,
    Chatter,
    Poster,
    Auditor,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Watcher,
        Role::Explorer,
        Role::Critic,
        Role::Chatter,
        Role::Poster,
        Role::Auditor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Watcher => "watcher",
            Role::Explorer => "explorer",
            Role::Critic => "critic",
            Role::Chatter => "chatter",
            Role::Poster => "poster",
            Role::Auditor => "auditor",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    View,
    Comment,
    Share,
    Flag,
    Repost,
    Claim,
}

impl Action {
    fn name(self) -> &'static str {
        match self {
            Action::View => "view",
            Action::Comment => "comment",
            Action::Share => "share",
            Action::Flag => "flag",
            Action::Repost => "repost",
            Action::Claim => "claim",
        }
    }

    /// Actions whose text becomes a dataset sample.
    pub fn yields_sample(self) -> bool {
        matches!(self, Action::Claim | Action::Comment | Action::Flag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    AssertsReal,
    AssertsFake,
    Neutral,
}

impl Stance {
    pub fn label(self) -> &'static str {
        match self {
            Stance::AssertsReal => "asserts_real",
            Stance::AssertsFake => "asserts_fake",
            Stance::Neutral => "neutral",
        }
    }

    pub fn from_label(label: &str) -> Option<Stance> {
        match label.trim().to_ascii_lowercase().as_str() {
            "asserts_real" => Some(Stance::AssertsReal),
            "asserts_fake" => Some(Stance::AssertsFake),
            "neutral" => Some(Stance::Neutral),
            _ => None,
        }
    }

    /// The stance that contradicts ground truth `y`.
    pub fn deceiving(y: u8) -> Stance {
        if y == 1 {
            Stance::AssertsReal
        } else {
            Stance::AssertsFake
        }
    }
}

const REAL_WORDS: [&str; 2] = ["real", "authentic"];
const FAKE_WORDS: [&str; 3] = ["fake", "forgery", "forged"];

/// Keyword stance rule: authenticity words give `AssertsReal`, forgery words
/// give `AssertsFake`; texts with neither, or with both, are `Neutral`.
pub fn keyword_stance(text: &str) -> Stance {
    let mut real = false;
    let mut fake = false;
    for t in tokens(text) {
        real |= REAL_WORDS.contains(&t.as_str());
        fake |= FAKE_WORDS.contains(&t.as_str());
    }
    match (real, fake) {
        (true, false) => Stance::AssertsReal,
        (false, true) => Stance::AssertsFake,
        _ => Stance::Neutral,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub event_id: String,
    pub blueprint_id: String,
    pub role: Role,
    pub action: Action,
    pub text: String,
    pub stance: Stance,
    /// Round number, starting at 1.
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialTrajectory {
    pub blueprint_id: String,
    pub events: Vec<InteractionEvent>,
    pub rounds: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub y: u8,
    pub stance: Stance,
    /// 1 marks a text-image contradiction.
    pub mismatch_flag: u8,
    /// 1 marks an accurate correspondence; always `1 - mismatch_flag`.
    pub consistency: u8,
}

/// Mismatch when a forged image is claimed real or a real image is claimed
/// forged; every other pairing, including neutral text, is consistent.
pub fn label_consistency(y: u8, stance: Stance) -> ConsistencyVerdict {
    let mismatch = matches!((y, stance), (1, Stance::AssertsReal) | (0, Stance::AssertsFake));
    let mismatch_flag = u8::from(mismatch);
    ConsistencyVerdict {
        y,
        stance,
        mismatch_flag,
        consistency: 1 - mismatch_flag,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StanceWeights {
    #[serde(default)]
    pub asserts_real: f64,
    #[serde(default)]
    pub asserts_fake: f64,
    #[serde(default)]
    pub neutral: f64,
}

impl StanceWeights {
    const fn new(asserts_real: f64, asserts_fake: f64, neutral: f64) -> Self {
        StanceWeights {
            asserts_real,
            asserts_fake,
            neutral,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Stance, SocialError> {
        let dist = WeightedIndex::new([self.asserts_real, self.asserts_fake, self.neutral])
            .map_err(|e| SocialError::InvalidConfig(format!("stance weights: {e}")))?;
        Ok([Stance::AssertsReal, Stance::AssertsFake, Stance::Neutral][dist.sample(rng)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolePolicy {
    pub actions: BTreeMap<Action, f64>,
    pub stance_on_forged: StanceWeights,
    pub stance_on_real: StanceWeights,
    /// Adopts the majority opinion of earlier events instead of sampling.
    #[serde(default)]
    pub follows_majority: bool,
    /// Always claims the opposite of ground truth.
    #[serde(default)]
    pub deceptive: bool,
}

impl RolePolicy {
    pub fn default_for(role: Role) -> Self {
        let actions = |a: &[(Action, f64)]| a.iter().copied().collect::<BTreeMap<_, _>>();
        let neutral_leaning = StanceWeights::new(0.1, 0.1, 0.8);
        match role {
            Role::Watcher => RolePolicy {
                actions: actions(&[(Action::View, 0.7), (Action::Comment, 0.3)]),
                stance_on_forged: StanceWeights::new(0.2, 0.0, 0.8),
                stance_on_real: StanceWeights::new(0.2, 0.0, 0.8),
                follows_majority: false,
                deceptive: false,
            },
            Role::Explorer => RolePolicy {
                actions: actions(&[(Action::View, 0.4), (Action::Comment, 0.4), (Action::Flag, 0.2)]),
                stance_on_forged: StanceWeights::new(0.1, 0.4, 0.5),
                stance_on_real: StanceWeights::new(0.4, 0.1, 0.5),
                follows_majority: false,
                deceptive: false,
            },
            Role::Critic => RolePolicy {
                actions: actions(&[(Action::Comment, 0.5), (Action::Flag, 0.5)]),
                stance_on_forged: StanceWeights::new(0.0, 0.8, 0.2),
                stance_on_real: StanceWeights::new(0.6, 0.1, 0.3),
                follows_majority: false,
                deceptive: false,
            },
            Role::Chatter => RolePolicy {
                actions: actions(&[(Action::Comment, 1.0)]),
                stance_on_forged: neutral_leaning,
                stance_on_real: neutral_leaning,
                follows_majority: true,
                deceptive: false,
            },
            Role::Poster => RolePolicy {
                actions: actions(&[(Action::Share, 0.5), (Action::Repost, 0.5)]),
                stance_on_forged: neutral_leaning,
                stance_on_real: neutral_leaning,
                follows_majority: false,
                deceptive: false,
            },
            Role::Auditor => RolePolicy {
                actions: actions(&[(Action::Claim, 1.0)]),
                stance_on_forged: StanceWeights::new(1.0, 0.0, 0.0),
                stance_on_real: StanceWeights::new(0.0, 1.0, 0.0),
                follows_majority: false,
                deceptive: true,
            },
        }
    }

    fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Action, SocialError> {
        let (acts, weights): (Vec<Action>, Vec<f64>) = self.actions.iter().map(|(a, w)| (*a, *w)).unzip();
        let dist =
            WeightedIndex::new(&weights).map_err(|e| SocialError::InvalidConfig(format!("action weights: {e}")))?;
        Ok(acts[dist.sample(rng)])
    }
}

fn default_roster() -> Vec<Role> {
    Role::ALL.to_vec()
}
fn default_rounds() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocialConfig {
    /// Multiset of roles; one of each by default.
    #[serde(default = "default_roster")]
    pub roster: Vec<Role>,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Per-role overrides of [`RolePolicy::default_for`].
    #[serde(default)]
    pub policies: BTreeMap<Role, RolePolicy>,
}

impl Default for SocialConfig {
    fn default() -> Self {
        SocialConfig {
            roster: default_roster(),
            rounds: default_rounds(),
            policies: BTreeMap::new(),
        }
    }
}

impl SocialConfig {
    pub fn policy(&self, role: Role) -> RolePolicy {
        self.policies
            .get(&role)
            .cloned()
            .unwrap_or_else(|| RolePolicy::default_for(role))
    }

    /// Roster in speaking order.
    pub fn ordered_roster(&self) -> Vec<Role> {
        let mut r = self.roster.clone();
        r.sort();
        r
    }

    pub fn validate(&self) -> Result<(), SocialError> {
        if self.roster.is_empty() {
            return Err(SocialError::EmptyRoster);
        }
        for (role, p) in &self.policies {
            if p.actions.is_empty() || p.actions.values().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(SocialError::InvalidConfig(format!("{role}: bad action weights")));
            }
        }
        Ok(())
    }
}

/// Asks the cognition backend to label a text's authenticity claim.
pub fn classify_stance(text: &str, cognition: &dyn CognitionBackend) -> Result<Stance, SocialError> {
    if text.trim().is_empty() {
        return Err(SocialError::EmptyText);
    }
    let request = CognitionRequest::new(CognitionTask::StanceClassify, json!({ "text": text }));
    let response = cognition.call(&request)?;
    Stance::from_label(&response.text).ok_or_else(|| {
        SocialError::BackendFailure(BackendError::Protocol {
            kind: BackendKind::Cognition,
            attempts: 1,
            message: format!("unknown stance label {:?}", response.text),
        })
    })
}

fn utter(
    blueprint: &ForgeryBlueprint,
    role: Role,
    action: Action,
    hint: Stance,
    round: u32,
    index: usize,
    cognition: &dyn CognitionBackend,
) -> Result<InteractionEvent, SocialError> {
    let request = CognitionRequest::new(
        CognitionTask::RoleUtterance,
        json!({
            "role": role.name(),
            "action": action.name(),
            "stance_hint": hint.label(),
            "y": blueprint.y,
            "blueprint_id": blueprint.blueprint_id,
            "image_ref": blueprint.result_image_ref,
            "description": blueprint.description(),
            "round": round,
            "index": index,
        }),
    );
    let text = cognition.call(&request)?.text;
    let stance = classify_stance(&text, cognition)?;
    Ok(InteractionEvent {
        event_id: format!("{}/e{index:04}", blueprint.blueprint_id),
        blueprint_id: blueprint.blueprint_id.clone(),
        role,
        action,
        text,
        stance,
        tick: u64::from(round),
    })
}

/// The auditor's deceptive claim: a forged image is called authentic, a real
/// one forged.
pub fn auditor_claim(
    blueprint: &ForgeryBlueprint,
    round: u32,
    index: usize,
    cognition: &dyn CognitionBackend,
) -> Result<InteractionEvent, SocialError> {
    utter(
        blueprint,
        Role::Auditor,
        Action::Claim,
        Stance::deceiving(blueprint.y),
        round,
        index,
        cognition,
    )
}

fn majority_opinion(events: &[InteractionEvent]) -> Stance {
    let real = events.iter().filter(|e| e.stance == Stance::AssertsReal).count();
    let fake = events.iter().filter(|e| e.stance == Stance::AssertsFake).count();
    match real.cmp(&fake) {
        std::cmp::Ordering::Greater => Stance::AssertsReal,
        std::cmp::Ordering::Less => Stance::AssertsFake,
        std::cmp::Ordering::Equal => Stance::Neutral,
    }
}

/// One round: every roster slot, in speaking order, emits one event.
/// `prior` holds the trajectory's earlier events; event numbering continues
/// from it.
pub fn run_round<R: Rng + ?Sized>(
    blueprint: &ForgeryBlueprint,
    cfg: &SocialConfig,
    round: u32,
    prior: &[InteractionEvent],
    cognition: &dyn CognitionBackend,
    rng: &mut R,
) -> Result<Vec<InteractionEvent>, SocialError> {
    let roster = cfg.ordered_roster();
    if roster.is_empty() {
        return Err(SocialError::EmptyRoster);
    }
    let mut seen: Vec<InteractionEvent> = prior.to_vec();
    let mut out = Vec::with_capacity(roster.len());
    for role in roster {
        let index = seen.len() + 1;
        let policy = cfg.policy(role);
        let event = if policy.deceptive {
            utter(
                blueprint,
                role,
                Action::Claim,
                Stance::deceiving(blueprint.y),
                round,
                index,
                cognition,
            )?
        } else {
            let action = policy.sample_action(rng)?;
            let hint = match action {
                Action::View => Stance::Neutral,
                Action::Flag => Stance::AssertsFake,
                _ if policy.follows_majority => majority_opinion(&seen),
                _ => {
                    let weights = if blueprint.y == 1 {
                        &policy.stance_on_forged
                    } else {
                        &policy.stance_on_real
                    };
                    weights.sample(rng)?
                }
            };
            utter(blueprint, role, action, hint, round, index, cognition)?
        };
        seen.push(event.clone());
        out.push(event);
    }
    Ok(out)
}

/// Full trajectory for one blueprint, driven by the keyed stream
/// `(seed, "social", blueprint_id)`.
pub fn simulate_trajectory(
    blueprint: &ForgeryBlueprint,
    cfg: &SocialConfig,
    cognition: &dyn CognitionBackend,
    seed: u64,
) -> Result<SocialTrajectory, SocialError> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, "social", &blueprint.blueprint_id);
    let mut events = Vec::with_capacity(cfg.roster.len() * cfg.rounds as usize);
    for round in 1..=cfg.rounds {
        let new = run_round(blueprint, cfg, round, &events, cognition, &mut rng)?;
        events.extend(new);
    }
    Ok(SocialTrajectory {
        blueprint_id: blueprint.blueprint_id.clone(),
        events,
        rounds: cfg.rounds,
    })
}

/// Sample id of a blueprint's own caption.
pub fn blueprint_sample_id(blueprint: &ForgeryBlueprint) -> String {
    format!("f-{:08}", blueprint.created_tick)
}

/// The blueprint's own caption plus one sample per claim, comment or flag.
pub fn build_sample_pairs(blueprint: &ForgeryBlueprint, trajectory: &SocialTrajectory) -> Vec<DatasetSample> {
    let base = blueprint_sample_id(blueprint);
    let provenance = |event: Option<&InteractionEvent>| Provenance {
        agent_id: Some(blueprint.agent_id.clone()),
        blueprint_id: Some(blueprint.blueprint_id.clone()),
        chain: blueprint.action.chain.summary(),
        s_llm: blueprint.gate.map(|g| g.score.s_llm),
        s_disc: blueprint.gate.map(|g| g.score.s_disc),
        fused: blueprint.gate.map(|g| g.score.fused),
        event_ref: event.map(|e| e.event_id.clone()),
        role: event.map(|e| e.role),
    };
    let mut out = vec![DatasetSample {
        sample_id: base.clone(),
        image_ref: blueprint.result_image_ref.clone(),
        text: blueprint.description().to_string(),
        y: blueprint.y,
        delta: blueprint.delta,
        mismatch_flag: 1 - blueprint.delta,
        provenance: provenance(None),
    }];
    for (i, event) in trajectory.events.iter().enumerate() {
        if !event.action.yields_sample() {
            continue;
        }
        let verdict = label_consistency(blueprint.y, event.stance);
        out.push(DatasetSample {
            sample_id: format!("{base}-e{:04}", i + 1),
            image_ref: blueprint.result_image_ref.clone(),
            text: event.text.clone(),
            y: blueprint.y,
            delta: verdict.consistency,
            mismatch_flag: verdict.mismatch_flag,
            provenance: provenance(Some(event)),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_rules() {
        assert_eq!(keyword_stance("perfectly real"), Stance::AssertsReal);
        assert_eq!(keyword_stance("obvious forgery"), Stance::AssertsFake);
        assert_eq!(keyword_stance("interesting photo"), Stance::Neutral);
        assert_eq!(keyword_stance("100% authentic"), Stance::AssertsReal);
        assert_eq!(keyword_stance("surreal colours"), Stance::Neutral);
        assert_eq!(keyword_stance("real or fake?"), Stance::Neutral);
        assert_eq!(keyword_stance("FORGED!"), Stance::AssertsFake);
    }

    #[test]
    fn truth_table() {
        let cases = [
            (1, Stance::AssertsReal, 1),
            (1, Stance::AssertsFake, 0),
            (1, Stance::Neutral, 0),
            (0, Stance::AssertsReal, 0),
            (0, Stance::AssertsFake, 1),
            (0, Stance::Neutral, 0),
        ];
        for (y, stance, mismatch) in cases {
            let v = label_consistency(y, stance);
            assert_eq!(v.mismatch_flag, mismatch, "{y} {stance:?}");
            assert_eq!(v.consistency, 1 - mismatch);
        }
    }

    #[test]
    fn deception_contradicts_truth() {
        assert_eq!(Stance::deceiving(1), Stance::AssertsReal);
        assert_eq!(Stance::deceiving(0), Stance::AssertsFake);
    }

    #[test]
    fn roster_speaking_order() {
        let cfg = SocialConfig {
            roster: vec![Role::Auditor, Role::Watcher, Role::Critic, Role::Watcher],
            ..SocialConfig::default()
        };
        assert_eq!(
            cfg.ordered_roster(),
            vec![Role::Watcher, Role::Watcher, Role::Critic, Role::Auditor]
        );
    }

    #[test]
    fn majority_ignores_neutral() {
        let ev = |stance| InteractionEvent {
            event_id: String::new(),
            blueprint_id: String::new(),
            role: Role::Watcher,
            action: Action::Comment,
            text: "x".into(),
            stance,
            tick: 1,
        };
        assert_eq!(majority_opinion(&[]), Stance::Neutral);
        assert_eq!(
            majority_opinion(&[ev(Stance::Neutral), ev(Stance::Neutral), ev(Stance::AssertsFake)]),
            Stance::AssertsFake
        );
        assert_eq!(
            majority_opinion(&[ev(Stance::AssertsReal), ev(Stance::AssertsFake)]),
            Stance::Neutral
        );
    }

    #[test]
    fn default_policies_are_valid_distributions() {
        for role in Role::ALL {
            let p = RolePolicy::default_for(role);
            assert!((p.actions.values().sum::<f64>() - 1.0).abs() < 1e-12, "{role}");
        }
        assert_eq!(RolePolicy::default_for(Role::Critic).stance_on_forged.asserts_fake, 0.8);
    }
}
