//! Agent profiles extracted from forgery metadata tables.
//!
//! A profile is a creator's numeric traits (how many forgeries, how many
//! distinct methods, how popular the chosen targets are) plus a free-text
//! description of their style. The tool distribution an agent samples from is
//! derived from that pair.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::actions::{Category, Toolbox};
use crate::backends::{BackendError, CognitionBackend, CognitionRequest, CognitionTask};
use crate::rational::Rational;
use crate::rng;

/// Column names of the metadata table, in order.
pub const METADATA_COLUMNS: [&str; 4] = ["record_id", "creator_id", "method_id", "target_id"];

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("creator {0:?} has no records")]
    InsufficientData(String),
    #[error("target {0:?} is missing from the popularity index")]
    IndexMismatch(String),
    #[error("toolbox has no operators")]
    EmptyToolbox,
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
    #[error("metadata line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate record_id {0:?}")]
    DuplicateRecord(String),
    #[error("invalid profile configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeryRecord {
    pub record_id: String,
    pub creator_id: String,
    pub method_id: String,
    pub target_id: String,
}

impl ForgeryRecord {
    pub fn new(record_id: &str, creator_id: &str, method_id: &str, target_id: &str) -> Self {
        ForgeryRecord {
            record_id: record_id.into(),
            creator_id: creator_id.into(),
            method_id: method_id.into(),
            target_id: target_id.into(),
        }
    }
}

/// Checks the table invariants: non-empty fields and unique record ids.
pub fn validate_records(records: &[ForgeryRecord]) -> Result<(), ProfileError> {
    let mut ids = HashSet::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        for (name, value) in METADATA_COLUMNS
            .iter()
            .zip([&r.record_id, &r.creator_id, &r.method_id, &r.target_id])
        {
            if value.trim().is_empty() {
                return Err(ProfileError::Malformed {
                    line: i + 1,
                    message: format!("empty {name}"),
                });
            }
        }
        if !ids.insert(r.record_id.as_str()) {
            return Err(ProfileError::DuplicateRecord(r.record_id.clone()));
        }
    }
    Ok(())
}

/// Reads a metadata table. Files ending in `.jsonl`/`.ndjson` hold one JSON
/// object per line; anything else is comma-separated text with a header row
/// naming exactly [`METADATA_COLUMNS`].
pub fn load_metadata(path: &Path) -> Result<Vec<ForgeryRecord>, ProfileError> {
    let io = |e: std::io::Error| ProfileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    );
    let records = if jsonl {
        read_metadata_jsonl(file)?
    } else {
        read_metadata_csv(file)?
    };
    validate_records(&records)?;
    Ok(records)
}

pub fn read_metadata_csv<R: Read>(reader: R) -> Result<Vec<ForgeryRecord>, ProfileError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ProfileError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != METADATA_COLUMNS {
        return Err(ProfileError::Malformed {
            line: 1,
            message: format!("expected header {}", METADATA_COLUMNS.join(",")),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| ProfileError::Malformed {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_metadata_jsonl<R: Read>(reader: R) -> Result<Vec<ForgeryRecord>, ProfileError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| ProfileError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ProfileError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Dataset-wide count of how often each target was manipulated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PopularityIndex {
    counts: BTreeMap<String, u64>,
}

impl PopularityIndex {
    pub fn build(records: &[ForgeryRecord]) -> Self {
        let mut counts = BTreeMap::new();
        for r in records {
            *counts.entry(r.target_id.clone()).or_insert(0) += 1;
        }
        PopularityIndex { counts }
    }

    pub fn popularity(&self, target_id: &str) -> Option<u64> {
        self.counts.get(target_id).copied()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

fn creator_records<'a>(records: &'a [ForgeryRecord], creator: &'a str) -> impl Iterator<Item = &'a ForgeryRecord> + 'a {
    records.iter().filter(move |r| r.creator_id == creator)
}

/// Number of forgeries by `creator`; 0 when the creator is absent.
pub fn compute_frequency(records: &[ForgeryRecord], creator: &str) -> u64 {
    creator_records(records, creator).count() as u64
}

/// Number of distinct methods across the creator's forgeries.
pub fn compute_diversity(records: &[ForgeryRecord], creator: &str) -> Result<u64, ProfileError> {
    let methods: HashSet<&str> = creator_records(records, creator)
        .map(|r| r.method_id.as_str())
        .collect();
    if methods.is_empty() {
        return Err(ProfileError::InsufficientData(creator.to_string()));
    }
    Ok(methods.len() as u64)
}

/// Mean popularity of the creator's targets, as an exact fraction.
pub fn compute_conformity(
    records: &[ForgeryRecord],
    index: &PopularityIndex,
    creator: &str,
) -> Result<Rational, ProfileError> {
    let mut n: i128 = 0;
    let mut sum: i128 = 0;
    for r in creator_records(records, creator) {
        let pop = index
            .popularity(&r.target_id)
            .ok_or_else(|| ProfileError::IndexMismatch(r.target_id.clone()))?;
        sum += pop as i128;
        n += 1;
    }
    if n == 0 {
        return Err(ProfileError::InsufficientData(creator.to_string()));
    }
    Ok(Rational::new(sum, n))
}

/// Median of per-creator diversity over the whole table (mean of the two
/// middle values for an even creator count).
pub fn diversity_median(records: &[ForgeryRecord]) -> Rational {
    let mut per_creator: HashMap<&str, HashSet<&str>> = HashMap::new();
    for r in records {
        per_creator
            .entry(r.creator_id.as_str())
            .or_default()
            .insert(r.method_id.as_str());
    }
    let mut values: Vec<i128> = per_creator.values().map(|m| m.len() as i128).collect();
    if values.is_empty() {
        return Rational::zero();
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        Rational::from_integer(values[n / 2])
    } else {
        Rational::new(values[n / 2 - 1] + values[n / 2], 2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// Number of forgeries (L) shown to the cognition backend for the style text.
    #[serde(default = "default_style_sample_size")]
    pub style_sample_size: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_style_sample_size() -> usize {
    5
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            style_sample_size: default_style_sample_size(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub agent_id: String,
    pub freq: u64,
    pub diversity: u64,
    pub conformity: Rational,
    pub style_text: String,
    /// Median creator diversity of the table the profile was built from.
    pub diversity_median: Rational,
}

impl AgentProfile {
    pub fn trait_vector(&self) -> (u64, u64, Rational) {
        (self.freq, self.diversity, self.conformity)
    }

    /// A profile with no style keywords and median diversity.
    pub fn neutral(agent_id: &str) -> Self {
        AgentProfile {
            agent_id: agent_id.into(),
            freq: 1,
            diversity: 1,
            conformity: Rational::one(),
            style_text: "no stated preference".into(),
            diversity_median: Rational::one(),
        }
    }
}

fn build_with_index(
    records: &[ForgeryRecord],
    index: &PopularityIndex,
    median: Rational,
    creator: &str,
    cfg: &ProfileConfig,
    cognition: &dyn CognitionBackend,
) -> Result<AgentProfile, ProfileError> {
    if cfg.style_sample_size == 0 {
        return Err(ProfileError::InvalidConfig("style_sample_size must be >= 1".into()));
    }
    let freq = compute_frequency(records, creator);
    let diversity = compute_diversity(records, creator)?;
    let conformity = compute_conformity(records, index, creator)?;

    let own: Vec<&ForgeryRecord> = creator_records(records, creator).collect();
    let take = cfg.style_sample_size.min(own.len());
    let mut rng = rng::stream(cfg.rng_seed, "style_sample", creator);
    let mut picked = sample_indices(&mut rng, own.len(), take).into_vec();
    picked.sort_unstable();
    let sampled: Vec<_> = picked
        .iter()
        .map(|&i| {
            let r = own[i];
            json!({"record_id": r.record_id, "method_id": r.method_id, "target_id": r.target_id})
        })
        .collect();
    let request = CognitionRequest::new(
        CognitionTask::StyleDescription,
        json!({ "agent_id": creator, "records": sampled }),
    );
    let style_text = cognition.call(&request)?.text;
    Ok(AgentProfile {
        agent_id: creator.to_string(),
        freq,
        diversity,
        conformity,
        style_text,
        diversity_median: median,
    })
}

/// Builds one creator's profile: exact traits plus a style description
/// written by the cognition backend from `min(L, freq)` sampled forgeries.
pub fn build_profile(
    records: &[ForgeryRecord],
    creator: &str,
    cfg: &ProfileConfig,
    cognition: &dyn CognitionBackend,
) -> Result<AgentProfile, ProfileError> {
    let index = PopularityIndex::build(records);
    build_with_index(records, &index, diversity_median(records), creator, cfg, cognition)
}

/// Profiles for every creator in the table, ordered by `agent_id`.
pub fn build_profiles(
    records: &[ForgeryRecord],
    cfg: &ProfileConfig,
    cognition: &dyn CognitionBackend,
) -> Result<Vec<AgentProfile>, ProfileError> {
    validate_records(records)?;
    let index = PopularityIndex::build(records);
    let median = diversity_median(records);
    let creators: BTreeSet<&str> = records.iter().map(|r| r.creator_id.as_str()).collect();
    creators
        .into_iter()
        .map(|c| build_with_index(records, &index, median, c, cfg, cognition))
        .collect()
}

pub fn write_profiles<W: Write>(profiles: &[AgentProfile], mut writer: W) -> std::io::Result<()> {
    for p in profiles {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_profiles<R: Read>(reader: R) -> Result<Vec<AgentProfile>, ProfileError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| ProfileError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ProfileError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Parameters of the style-to-tool weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolWeighting {
    /// Starting weight per category; categories left out default to 1.
    #[serde(default)]
    pub base_weights: BTreeMap<Category, f64>,
    /// Keywords whose occurrences in the style text add weight to a category.
    #[serde(default = "default_lexicon")]
    pub lexicon: BTreeMap<Category, Vec<String>>,
    /// Weight added per keyword hit.
    #[serde(default = "default_hit_weight")]
    pub hit_weight: f64,
    /// Blend toward uniform applied to agents more diverse than the table median.
    #[serde(default = "default_flatten")]
    pub flatten_factor: f64,
}

fn default_lexicon() -> BTreeMap<Category, Vec<String>> {
    let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    BTreeMap::from([
        (
            Category::IdentityManipulation,
            words(&["swap", "identity", "faceswap", "deepfake", "faceshifter"]),
        ),
        (
            Category::AttributeExpressionEditing,
            words(&["expression", "attribute", "age", "gender", "reenact", "face2face"]),
        ),
        (
            Category::StyleBasedSynthesis,
            words(&["style", "texture", "blend", "synthesis", "neuraltexture", "painterly"]),
        ),
    ])
}
fn default_hit_weight() -> f64 {
    1.0
}
fn default_flatten() -> f64 {
    0.5
}

impl Default for ToolWeighting {
    fn default() -> Self {
        ToolWeighting {
            base_weights: BTreeMap::new(),
            lexicon: default_lexicon(),
            hit_weight: default_hit_weight(),
            flatten_factor: default_flatten(),
        }
    }
}

impl ToolWeighting {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.base_weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ProfileError::InvalidConfig("base weights must be non-negative".into()));
        }
        if !self.hit_weight.is_finite() || self.hit_weight < 0.0 {
            return Err(ProfileError::InvalidConfig("hit_weight must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.flatten_factor) {
            return Err(ProfileError::InvalidConfig("flatten_factor must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn base(&self, c: Category) -> f64 {
        self.base_weights.get(&c).copied().unwrap_or(1.0)
    }
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Keyword hits per category; a token hits a keyword when it starts with it.
pub fn keyword_hits(style_text: &str, lexicon: &BTreeMap<Category, Vec<String>>) -> BTreeMap<Category, u64> {
    let toks: Vec<String> = tokens(style_text).collect();
    Category::ALL
        .iter()
        .map(|c| {
            let words = lexicon.get(c).map(Vec::as_slice).unwrap_or(&[]);
            let hits = toks
                .iter()
                .filter(|t| words.iter().any(|w| !w.is_empty() && t.starts_with(&w.to_lowercase())))
                .count() as u64;
            (*c, hits)
        })
        .collect()
}

/// Category probabilities for an agent.
///
/// Each category starts at its base weight (default 1) plus `hit_weight` per
/// style-text keyword hit. Categories with a zero base weight or no operator
/// in the toolbox get probability 0. Agents whose diversity exceeds the table
/// median are blended toward uniform over the remaining support by
/// `flatten_factor`. The result is normalized last.
pub fn derive_tool_distribution(
    profile: &AgentProfile,
    toolbox: &Toolbox,
    weighting: &ToolWeighting,
) -> Result<BTreeMap<Category, f64>, ProfileError> {
    if toolbox.operators().is_empty() {
        return Err(ProfileError::EmptyToolbox);
    }
    let hits = keyword_hits(&profile.style_text, &weighting.lexicon);
    let mut weights: BTreeMap<Category, f64> = Category::ALL
        .iter()
        .map(|&c| {
            let base = weighting.base(c);
            let w = if base > 0.0 && toolbox.has_category(c) {
                base + weighting.hit_weight * hits[&c] as f64
            } else {
                0.0
            };
            (c, w)
        })
        .collect();
    let total: f64 = weights.values().sum();
    if total <= 0.0 {
        return Err(ProfileError::EmptyToolbox);
    }
    weights.values_mut().for_each(|w| *w /= total);

    if Rational::from_integer(profile.diversity as i128) > profile.diversity_median {
        let support = weights.values().filter(|w| **w > 0.0).count() as f64;
        let f = weighting.flatten_factor;
        for w in weights.values_mut().filter(|w| **w > 0.0) {
            *w = (1.0 - f) * *w + f / support;
        }
    }
    let total: f64 = weights.values().sum();
    weights.values_mut().for_each(|w| *w /= total);
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::make_stub;

    fn toy() -> Vec<ForgeryRecord> {
        vec![
            ForgeryRecord::new("r1", "c1", "A", "X"),
            ForgeryRecord::new("r2", "c1", "B", "X"),
            ForgeryRecord::new("r3", "c1", "A", "Y"),
            ForgeryRecord::new("r4", "c2", "A", "X"),
        ]
    }

    #[test]
    fn frequency() {
        let t = toy();
        assert_eq!(compute_frequency(&t, "c1"), 3);
        assert_eq!(compute_frequency(&t, "nobody"), 0);
    }

    #[test]
    fn diversity() {
        let t = toy();
        assert_eq!(compute_diversity(&t, "c1").unwrap(), 2);
        assert_eq!(compute_diversity(&t, "c2").unwrap(), 1);
        assert!(matches!(
            compute_diversity(&t, "nobody"),
            Err(ProfileError::InsufficientData(_))
        ));
    }

    #[test]
    fn conformity_toy_table() {
        let t = toy();
        let idx = PopularityIndex::build(&t);
        assert_eq!(idx.popularity("X"), Some(3));
        assert_eq!(idx.total(), 4);
        assert_eq!(compute_conformity(&t, &idx, "c1").unwrap(), Rational::new(7, 3));
        assert_eq!(compute_conformity(&t, &idx, "c2").unwrap(), Rational::from_integer(3));
    }

    #[test]
    fn conformity_unique_target_is_one() {
        let t = vec![ForgeryRecord::new("r1", "solo", "A", "only-me")];
        let idx = PopularityIndex::build(&t);
        assert_eq!(compute_conformity(&t, &idx, "solo").unwrap(), Rational::one());
    }

    #[test]
    fn conformity_index_mismatch() {
        let t = toy();
        let idx = PopularityIndex::build(&t[..1]);
        assert!(matches!(
            compute_conformity(&t, &idx, "c1"),
            Err(ProfileError::IndexMismatch(ref target)) if target == "Y"
        ));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(diversity_median(&toy()), Rational::new(3, 2));
        let mut t = toy();
        t.push(ForgeryRecord::new("r5", "c3", "C", "Z"));
        assert_eq!(diversity_median(&t), Rational::one());
    }

    #[test]
    fn stub_profile_is_deterministic() {
        let stub = make_stub(9);
        let cfg = ProfileConfig::default();
        let a = build_profile(&toy(), "c1", &cfg, stub.as_ref()).unwrap();
        let b = build_profile(&toy(), "c1", &cfg, stub.as_ref()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trait_vector(), (3, 2, Rational::new(7, 3)));
        assert!(!a.style_text.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut t = toy();
        t[1].record_id = "r1".into();
        assert!(matches!(validate_records(&t), Err(ProfileError::DuplicateRecord(_))));
    }

    #[test]
    fn csv_header_is_enforced() {
        let ok = "record_id,creator_id,method_id,target_id\nr1,c1,A,X\n";
        assert_eq!(read_metadata_csv(ok.as_bytes()).unwrap().len(), 1);
        let bad = "id,creator,method,target\nr1,c1,A,X\n";
        assert!(read_metadata_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn uniform_profile_gets_uniform_weights() {
        let p = AgentProfile::neutral("a");
        let d = derive_tool_distribution(&p, &Toolbox::builtin(), &ToolWeighting::default()).unwrap();
        for w in d.values() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_base_weight_gets_zero_probability() {
        let mut p = AgentProfile::neutral("a");
        p.style_text = "style style swap".into();
        p.diversity = 5; // above median, triggers flattening
        let weighting = ToolWeighting {
            base_weights: BTreeMap::from([(Category::StyleBasedSynthesis, 0.0)]),
            ..ToolWeighting::default()
        };
        let d = derive_tool_distribution(&p, &Toolbox::builtin(), &weighting).unwrap();
        assert_eq!(d[&Category::StyleBasedSynthesis], 0.0);
        assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn keywords_and_flattening() {
        let mut p = AgentProfile::neutral("a");
        p.style_text = "Seamless identity swaps and clean swap work".into();
        let d = derive_tool_distribution(&p, &Toolbox::builtin(), &ToolWeighting::default()).unwrap();
        // identity: 1 + 3 hits = 4; others 1 each -> 4/6, 1/6, 1/6
        assert!((d[&Category::IdentityManipulation] - 4.0 / 6.0).abs() < 1e-12);
        p.diversity = 2; // above median 1
        let f = derive_tool_distribution(&p, &Toolbox::builtin(), &ToolWeighting::default()).unwrap();
        let expected = 0.5 * 4.0 / 6.0 + 0.5 / 3.0;
        assert!((f[&Category::IdentityManipulation] - expected).abs() < 1e-12);
    }
}
