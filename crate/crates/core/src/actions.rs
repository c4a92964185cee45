//! Forgery actions: operator toolbox, chain sampling and application, and
//! blueprint assembly.
//!
//! An action pairs a visual edit (an ordered chain of operators, each applied
//! to the previous step's output) with a textual description that is either an
//! accurate caption or a deliberately misleading one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ars::CandidateScore;
use crate::backends::{BackendError, CognitionBackend, CognitionRequest, CognitionTask, EditBackend, EditRequest};
use crate::memory::MemoryRecord;
use crate::profile::{derive_tool_distribution, AgentProfile, ProfileError, ToolWeighting};
use crate::rational::Rational;

#[derive(Debug, thiserror::Error)]
pub enum ActionError {
    #[error("toolbox has no operators")]
    EmptyToolbox,
    #[error("invalid toolbox: {0}")]
    InvalidToolbox(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("edit backend failed at step {step}: {source}")]
    EditFailure { step: usize, source: BackendError },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot read toolbox {path}: {message}")]
    Io { path: String, message: String },
}

impl From<ProfileError> for ActionError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::EmptyToolbox => ActionError::EmptyToolbox,
            other => ActionError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    IdentityManipulation,
    AttributeExpressionEditing,
    StyleBasedSynthesis,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::IdentityManipulation,
        Category::AttributeExpressionEditing,
        Category::StyleBasedSynthesis,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Category::IdentityManipulation => "identity manipulation",
            Category::AttributeExpressionEditing => "attribute & expression editing",
            Category::StyleBasedSynthesis => "style-based synthesis",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamDomain {
    Float { min: f64, max: f64 },
    Int { min: i64, max: i64 },
    Choice { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamDomain {
    fn validate(&self) -> Result<(), String> {
        match self {
            ParamDomain::Float { min, max } if !(min.is_finite() && max.is_finite() && min <= max) => {
                Err(format!("float domain [{min}, {max}] is invalid"))
            }
            ParamDomain::Int { min, max } if min > max => Err(format!("int domain [{min}, {max}] is empty")),
            ParamDomain::Choice { values } if values.is_empty() => Err("choice domain is empty".into()),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, value: &ParamValue) -> bool {
        match (self, value) {
            (ParamDomain::Float { min, max }, ParamValue::Float(v)) => v >= min && v <= max,
            (ParamDomain::Float { min, max }, ParamValue::Int(v)) => (*v as f64) >= *min && (*v as f64) <= *max,
            (ParamDomain::Int { min, max }, ParamValue::Int(v)) => v >= min && v <= max,
            (ParamDomain::Choice { values }, ParamValue::Text(v)) => values.contains(v),
            _ => false,
        }
    }

    /// Uniform draw; floats are rounded to four decimals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match self {
            ParamDomain::Float { min, max } => {
                let raw = if min == max {
                    *min
                } else {
                    rng.random_range(*min..=*max)
                };
                ParamValue::Float(((raw * 1e4).round() / 1e4).clamp(*min, *max))
            }
            ParamDomain::Int { min, max } => ParamValue::Int(rng.random_range(*min..=*max)),
            ParamDomain::Choice { values } => ParamValue::Text(values[rng.random_range(0..values.len())].clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditOperator {
    pub op_id: String,
    pub category: Category,
    #[serde(default)]
    pub params: BTreeMap<String, ParamDomain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toolbox {
    #[serde(rename = "operator", default)]
    operators: Vec<EditOperator>,
}

impl Toolbox {
    pub fn new(mut operators: Vec<EditOperator>) -> Result<Self, ActionError> {
        if operators.is_empty() {
            return Err(ActionError::EmptyToolbox);
        }
        operators.sort_by(|a, b| a.op_id.cmp(&b.op_id));
        let mut seen = BTreeSet::new();
        for op in &operators {
            if op.op_id.trim().is_empty() {
                return Err(ActionError::InvalidToolbox("empty op_id".into()));
            }
            if !seen.insert(op.op_id.as_str()) {
                return Err(ActionError::InvalidToolbox(format!("duplicate op_id {}", op.op_id)));
            }
            for (name, domain) in &op.params {
                domain
                    .validate()
                    .map_err(|m| ActionError::InvalidToolbox(format!("{}.{name}: {m}", op.op_id)))?;
            }
        }
        Ok(Toolbox { operators })
    }

    /// Parses the TOML toolbox format (`[[operator]]` tables).
    pub fn from_toml(text: &str) -> Result<Self, ActionError> {
        let raw: Toolbox = toml::from_str(text).map_err(|e| ActionError::InvalidToolbox(e.to_string()))?;
        Toolbox::new(raw.operators)
    }

    pub fn load(path: &Path) -> Result<Self, ActionError> {
        let text = std::fs::read_to_string(path).map_err(|e| ActionError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Toolbox::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("toolbox serializes")
    }

    /// Default toolbox: two operators per category.
    pub fn builtin() -> Self {
        let float = |min, max| ParamDomain::Float { min, max };
        let choice = |v: &[&str]| ParamDomain::Choice {
            values: v.iter().map(|s| s.to_string()).collect(),
        };
        let op = |id: &str, category, params: Vec<(&str, ParamDomain)>| EditOperator {
            op_id: id.to_string(),
            category,
            params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        };
        Toolbox::new(vec![
            op(
                "face_swap",
                Category::IdentityManipulation,
                vec![("blend_ratio", float(0.0, 1.0)), ("mask", choice(&["full", "inner"]))],
            ),
            op(
                "identity_morph",
                Category::IdentityManipulation,
                vec![("alpha", float(0.2, 0.8))],
            ),
            op(
                "expression_edit",
                Category::AttributeExpressionEditing,
                vec![
                    ("target", choice(&["smile", "neutral", "surprise", "anger"])),
                    ("intensity", float(0.0, 1.0)),
                ],
            ),
            op(
                "attribute_edit",
                Category::AttributeExpressionEditing,
                vec![
                    ("attribute", choice(&["age", "gender", "hair"])),
                    ("magnitude", float(-1.0, 1.0)),
                ],
            ),
            op(
                "style_blend",
                Category::StyleBasedSynthesis,
                vec![
                    ("layers", ParamDomain::Int { min: 1, max: 18 }),
                    ("strength", float(0.0, 1.0)),
                ],
            ),
            op(
                "self_blend",
                Category::StyleBasedSynthesis,
                vec![("seam_sigma", float(0.5, 5.0))],
            ),
        ])
        .expect("builtin toolbox is valid")
    }

    pub fn operators(&self) -> &[EditOperator] {
        &self.operators
    }

    pub fn get(&self, op_id: &str) -> Option<&EditOperator> {
        self.operators.iter().find(|o| o.op_id == op_id)
    }

    /// Operators of one category, ordered by `op_id`.
    pub fn in_category(&self, category: Category) -> Vec<&EditOperator> {
        self.operators.iter().filter(|o| o.category == category).collect()
    }

    pub fn has_category(&self, category: Category) -> bool {
        self.operators.iter().any(|o| o.category == category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub op_id: String,
    pub category: Category,
    pub params: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorChain {
    pub steps: Vec<ChainStep>,
}

impl OperatorChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `op1>op2>...` in application order.
    pub fn summary(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.op_id.as_str())
            .collect::<Vec<_>>()
            .join(">")
    }

    /// Distinct categories in order of first use.
    pub fn categories(&self) -> Vec<Category> {
        let mut out = Vec::new();
        for s in &self.steps {
            if !out.contains(&s.category) {
                out.push(s.category);
            }
        }
        out
    }

    pub fn validate(&self, toolbox: &Toolbox, max_len: usize) -> Result<(), ActionError> {
        if self.steps.is_empty() || self.steps.len() > max_len {
            return Err(ActionError::InvalidParams(format!(
                "chain length {} outside 1..={max_len}",
                self.steps.len()
            )));
        }
        for (i, step) in self.steps.iter().enumerate() {
            let op = toolbox
                .get(&step.op_id)
                .ok_or_else(|| ActionError::InvalidParams(format!("step {i}: unknown operator {}", step.op_id)))?;
            if op.category != step.category {
                return Err(ActionError::InvalidParams(format!(
                    "step {i}: category mismatch for {}",
                    step.op_id
                )));
            }
            for (name, domain) in &op.params {
                match step.params.get(name) {
                    Some(v) if domain.contains(v) => {}
                    Some(v) => {
                        return Err(ActionError::InvalidParams(format!(
                            "step {i}: {}.{name} = {v:?} outside domain",
                            step.op_id
                        )))
                    }
                    None => {
                        return Err(ActionError::InvalidParams(format!(
                            "step {i}: {}.{name} missing",
                            step.op_id
                        )))
                    }
                }
            }
            if let Some(extra) = step.params.keys().find(|k| !op.params.contains_key(*k)) {
                return Err(ActionError::InvalidParams(format!(
                    "step {i}: unknown parameter {extra}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Accurate,
    Misleading,
}

impl Intent {
    /// Creator-assigned consistency: 1 for an accurate caption, 0 for a misleading one.
    pub fn consistency(self) -> u8 {
        match self {
            Intent::Accurate => 1,
            Intent::Misleading => 0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Intent::Accurate => "accurate",
            Intent::Misleading => "misleading",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Weight of chain length `i + 1` at index `i`.
    #[serde(default = "default_length_weights")]
    pub length_weights: Vec<f64>,
    #[serde(default = "default_misleading_probability")]
    pub misleading_probability: f64,
    /// Evaluative records consulted for remembered parameter values.
    #[serde(default = "default_memory_lookback")]
    pub memory_lookback: usize,
}

fn default_length_weights() -> Vec<f64> {
    vec![0.5, 0.35, 0.15]
}
fn default_misleading_probability() -> f64 {
    0.5
}
fn default_memory_lookback() -> usize {
    32
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            length_weights: default_length_weights(),
            misleading_probability: default_misleading_probability(),
            memory_lookback: default_memory_lookback(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), ActionError> {
        if self.length_weights.is_empty()
            || self.length_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.length_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(ActionError::InvalidConfig(
                "length_weights must be non-negative with positive sum".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.misleading_probability) {
            return Err(ActionError::InvalidConfig(
                "misleading_probability must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn max_len(&self) -> usize {
        self.length_weights.len()
    }
}

/// Draws categories from a tool distribution.
pub struct CategorySampler {
    categories: Vec<Category>,
    index: WeightedIndex<f64>,
}

impl CategorySampler {
    pub fn new(distribution: &BTreeMap<Category, f64>) -> Result<Self, ActionError> {
        let (categories, weights): (Vec<Category>, Vec<f64>) = distribution.iter().map(|(c, w)| (*c, *w)).unzip();
        let index = WeightedIndex::new(&weights).map_err(|_| ActionError::EmptyToolbox)?;
        Ok(CategorySampler { categories, index })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Category {
        self.categories[self.index.sample(rng)]
    }
}

/// Most recent remembered value for `op_id.param`, from evaluative records
/// ordered newest first. Records carry them under `preferred_params.<op_id>`.
pub fn remembered_param<'a>(memory: &'a [MemoryRecord], op_id: &str, param: &str) -> Option<&'a Value> {
    memory
        .iter()
        .find_map(|r| r.payload.get("preferred_params")?.get(op_id))
        .and_then(|params| params.get(param))
}

/// Samples a chain: length from the configured length law, categories from
/// the agent's tool distribution, an operator uniformly within the category,
/// and parameters from memory when remembered, otherwise uniformly.
pub fn sample_operator_chain<R: Rng + ?Sized>(
    profile: &AgentProfile,
    toolbox: &Toolbox,
    weighting: &ToolWeighting,
    memory: &[MemoryRecord],
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<OperatorChain, ActionError> {
    let distribution = derive_tool_distribution(profile, toolbox, weighting)?;
    let sampler = CategorySampler::new(&distribution)?;
    let lengths = WeightedIndex::new(&cfg.length_weights).map_err(|e| ActionError::InvalidConfig(e.to_string()))?;
    let len = lengths.sample(rng) + 1;
    let mut steps = Vec::with_capacity(len);
    for _ in 0..len {
        let category = sampler.sample(rng);
        let ops = toolbox.in_category(category);
        let op = ops[rng.random_range(0..ops.len())];
        let mut params = BTreeMap::new();
        for (name, domain) in &op.params {
            let remembered = remembered_param(memory, &op.op_id, name)
                .and_then(|v| serde_json::from_value::<ParamValue>(v.clone()).ok())
                .filter(|v| domain.contains(v));
            let value = match remembered {
                Some(v) => v,
                None => domain.sample(rng),
            };
            params.insert(name.clone(), value);
        }
        steps.push(ChainStep {
            op_id: op.op_id.clone(),
            category,
            params,
        });
    }
    Ok(OperatorChain { steps })
}

/// Applies the chain step by step, feeding each output into the next step.
pub fn apply_chain(
    source_image_ref: &str,
    chain: &OperatorChain,
    toolbox: &Toolbox,
    max_len: usize,
    edit: &dyn EditBackend,
) -> Result<String, ActionError> {
    chain.validate(toolbox, max_len)?;
    let mut current = source_image_ref.to_string();
    for (step, s) in chain.steps.iter().enumerate() {
        let request = EditRequest {
            image_ref: current,
            op_id: s.op_id.clone(),
            params: serde_json::to_value(&s.params).expect("params serialize"),
        };
        current = edit
            .call(&request)
            .map_err(|source| ActionError::EditFailure { step, source })?
            .image_ref;
    }
    Ok(current)
}

pub fn sample_intent<R: Rng + ?Sized>(misleading_probability: f64, rng: &mut R) -> Intent {
    if rng.random_bool(misleading_probability) {
        Intent::Misleading
    } else {
        Intent::Accurate
    }
}

/// Asks the cognition backend for the creator's caption of an edited image.
pub fn generate_description(
    result_image_ref: &str,
    chain: &OperatorChain,
    intent: Intent,
    agent_id: &str,
    cognition: &dyn CognitionBackend,
) -> Result<String, ActionError> {
    let categories: Vec<&str> = chain.categories().iter().map(|c| c.display_name()).collect();
    let op_ids: Vec<&str> = chain.steps.iter().map(|s| s.op_id.as_str()).collect();
    let request = CognitionRequest::new(
        CognitionTask::Describe,
        json!({
            "subject": "forged",
            "agent_id": agent_id,
            "image_ref": result_image_ref,
            "intent": intent.label(),
            "categories": categories,
            "op_ids": op_ids,
        }),
    );
    Ok(cognition.call(&request)?.text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub chain: OperatorChain,
    pub description: String,
    pub intent: Intent,
}

/// Gate outcome attached to an accepted blueprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateRecord {
    pub score: CandidateScore,
    pub tau_in_force: Rational,
    pub is_challenge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeryBlueprint {
    pub blueprint_id: String,
    pub agent_id: String,
    pub created_tick: u64,
    pub source_image_ref: String,
    pub result_image_ref: String,
    /// Authenticity label; always 1 for blueprints.
    pub y: u8,
    /// Creator-assigned consistency: 1 iff the intent is accurate.
    pub delta: u8,
    pub action: AgentAction,
    #[serde(default)]
    pub gate: Option<GateRecord>,
}

impl ForgeryBlueprint {
    pub fn description(&self) -> &str {
        &self.action.description
    }
}

pub fn blueprint_id_for_tick(tick: u64) -> String {
    format!("bp-{tick:08}")
}

pub fn assemble_blueprint(
    source_image_ref: &str,
    result_image_ref: &str,
    chain: OperatorChain,
    description: String,
    intent: Intent,
    agent_id: &str,
    tick: u64,
) -> ForgeryBlueprint {
    ForgeryBlueprint {
        blueprint_id: blueprint_id_for_tick(tick),
        agent_id: agent_id.to_string(),
        created_tick: tick,
        source_image_ref: source_image_ref.to_string(),
        result_image_ref: result_image_ref.to_string(),
        y: 1,
        delta: intent.consistency(),
        action: AgentAction {
            chain,
            description,
            intent,
        },
        gate: None,
    }
}
