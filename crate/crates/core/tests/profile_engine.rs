mod common;

use std::sync::Mutex;

use forgesim::actions::{Category, Toolbox};
use forgesim::backends::{make_stub, BackendError, CognitionBackend, CognitionRequest, CognitionResponse};
use forgesim::profile::*;
use forgesim::rational::Rational;
use proptest::prelude::*;

struct Recording {
    text: String,
    requests: Mutex<Vec<CognitionRequest>>,
}

impl Recording {
    fn new(text: &str) -> Self {
        Recording {
            text: text.into(),
            requests: Mutex::new(Vec::new()),
        }
    }
}

impl CognitionBackend for Recording {
    fn complete(&self, request: &CognitionRequest) -> Result<CognitionResponse, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        Ok(CognitionResponse {
            text: self.text.clone(),
            score: None,
        })
    }
}

#[test]
fn traits_match_oracle_on_hundred_record_table() {
    let table = common::toy_table(21, 100, 7, 4, 12);
    let oracle = common::oracle_traits(&table);
    let index = PopularityIndex::build(&table);
    for (creator, expect) in &oracle {
        assert_eq!(compute_frequency(&table, creator), expect.freq, "{creator}");
        assert_eq!(
            compute_diversity(&table, creator).unwrap(),
            expect.diversity,
            "{creator}"
        );
        let (n, d) = expect.conformity;
        assert_eq!(
            compute_conformity(&table, &index, creator).unwrap(),
            Rational::new(n, d),
            "{creator}"
        );
    }
}

#[test]
fn table_invariants_hold() {
    let table = common::toy_table(5, 2_000, 40, 9, 60);
    let index = PopularityIndex::build(&table);
    let oracle = common::oracle_traits(&table);
    let total: u64 = oracle.keys().map(|c| compute_frequency(&table, c)).sum();
    assert_eq!(total, table.len() as u64);
    for c in oracle.keys() {
        let f = compute_frequency(&table, c);
        assert!(compute_diversity(&table, c).unwrap() <= f);
        assert!(compute_conformity(&table, &index, c).unwrap() >= Rational::one());
    }
}

#[test]
fn absent_creator() {
    let table = common::toy_table(1, 50, 3, 3, 3);
    let index = PopularityIndex::build(&table);
    assert_eq!(compute_frequency(&table, "ghost"), 0);
    assert!(matches!(
        compute_diversity(&table, "ghost"),
        Err(ProfileError::InsufficientData(_))
    ));
    assert!(matches!(
        compute_conformity(&table, &index, "ghost"),
        Err(ProfileError::InsufficientData(_))
    ));
}

#[test]
fn style_sample_bounded_by_limit() {
    let table: Vec<ForgeryRecord> = (0..5)
        .map(|i| ForgeryRecord::new(&format!("r{i}"), "c", "m", "t"))
        .collect();
    let backend = Recording::new("prefers swap work");
    let cfg = ProfileConfig {
        style_sample_size: 2,
        rng_seed: 3,
    };
    let p = build_profile(&table, "c", &cfg, &backend).unwrap();
    assert_eq!(p.style_text, "prefers swap work");
    assert_eq!(p.trait_vector(), (5, 1, Rational::from_integer(5)));
    let reqs = backend.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].context["records"].as_array().unwrap().len(), 2);
}

#[test]
fn profiles_are_reproducible() {
    let table = common::toy_table(8, 300, 10, 6, 20);
    let cfg = ProfileConfig {
        style_sample_size: 4,
        rng_seed: 8,
    };
    let a = build_profiles(&table, &cfg, make_stub(8).as_ref()).unwrap();
    let b = build_profiles(&table, &cfg, make_stub(8).as_ref()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
}

#[test]
fn uniform_profile_gives_equal_thirds() {
    let d = derive_tool_distribution(
        &AgentProfile::neutral("a"),
        &Toolbox::builtin(),
        &ToolWeighting::default(),
    )
    .unwrap();
    for c in Category::ALL {
        assert!((d[&c] - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn csv_and_jsonl_tables_agree() {
    let table = common::toy_table(2, 40, 4, 3, 5);
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("t.csv");
    let mut w = csv::Writer::from_path(&csv_path).unwrap();
    for r in &table {
        w.serialize(r).unwrap();
    }
    w.flush().unwrap();
    let jsonl_path = dir.path().join("t.jsonl");
    let lines: Vec<String> = table.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    std::fs::write(&jsonl_path, lines.join("\n")).unwrap();
    assert_eq!(load_metadata(&csv_path).unwrap(), table);
    assert_eq!(load_metadata(&jsonl_path).unwrap(), table);
}

fn style_words() -> impl Strategy<Value = String> {
    let vocab = [
        "swap",
        "identity",
        "expression",
        "age",
        "style",
        "texture",
        "blend",
        "portrait",
        "subtle",
        "bold",
        "reenactment",
        "painterly",
    ];
    prop::collection::vec(prop::sample::select(vocab.to_vec()), 0..12).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tool_distribution_is_a_distribution(
        style in style_words(),
        diversity in 1u64..10,
        median_twice in 2i128..20,
        zero_mask in 0u8..7,
        flatten in 0.0f64..=1.0,
    ) {
        let profile = AgentProfile {
            agent_id: "a".into(),
            freq: 10,
            diversity,
            conformity: Rational::one(),
            style_text: style,
            diversity_median: Rational::new(median_twice, 2),
        };
        let mut w = ToolWeighting { flatten_factor: flatten, ..ToolWeighting::default() };
        for (i, c) in Category::ALL.iter().enumerate() {
            if zero_mask & (1 << i) != 0 {
                w.base_weights.insert(*c, 0.0);
            }
        }
        let d = derive_tool_distribution(&profile, &Toolbox::builtin(), &w).unwrap();
        prop_assert!(d.values().all(|p| *p >= 0.0));
        prop_assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-9);
        for (i, c) in Category::ALL.iter().enumerate() {
            if zero_mask & (1 << i) != 0 {
                prop_assert_eq!(d[c], 0.0);
            }
        }
    }
}
