use forgesim::backends::make_stub;
use forgesim::memory::{MemoryError, MemoryKind, MemoryStore};
use proptest::prelude::*;
use rand::Rng;
use serde_json::{json, Map, Value};

fn payload(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

#[test]
fn interleaved_writes_replay_contiguously() {
    let mut store = MemoryStore::new();
    let mut rng = forgesim::rng::stream(3, "memtest", "interleave");
    let mut expected_next = [1u64, 1u64];
    let mut written = 0;
    // Random interleaving with 500 writes per agent.
    let mut remaining = [500, 500];
    while written < 1000 {
        let a = if remaining[0] == 0 {
            1
        } else if remaining[1] == 0 {
            0
        } else {
            rng.random_range(0..2)
        };
        let kind = if rng.random_bool(0.5) {
            MemoryKind::Factual
        } else {
            MemoryKind::Evaluative
        };
        let seq = store
            .write(&format!("agent{a}"), kind, payload(json!({"n": written})), written)
            .unwrap();
        assert_eq!(seq, expected_next[a]);
        expected_next[a] += 1;
        remaining[a] -= 1;
        written += 1;
    }
    for a in 0..2 {
        let seqs: Vec<u64> = store
            .agent(&format!("agent{a}"))
            .unwrap()
            .records()
            .iter()
            .map(|r| r.seq)
            .collect();
        assert_eq!(seqs, (1..=500).collect::<Vec<_>>());
    }

    let mut log = Vec::new();
    store.write_log(&mut log).unwrap();
    let reloaded = MemoryStore::load(log.as_slice(), None::<&[u8]>).unwrap();
    for a in ["agent0", "agent1"] {
        for kind in [None, Some(MemoryKind::Factual), Some(MemoryKind::Evaluative)] {
            assert_eq!(store.retrieve(a, kind, 1000), reloaded.retrieve(a, kind, 1000));
        }
    }
    let mut relog = Vec::new();
    reloaded.write_log(&mut relog).unwrap();
    assert_eq!(log, relog);
}

#[test]
fn filtered_retrieval_returns_newest_evaluative() {
    let mut store = MemoryStore::new();
    for i in 0..5 {
        store
            .write("a", MemoryKind::Factual, payload(json!({"f": i})), i)
            .unwrap();
    }
    for i in 0..3 {
        store
            .write("a", MemoryKind::Evaluative, payload(json!({"e": i})), 10 + i)
            .unwrap();
    }
    let got = store.retrieve("a", Some(MemoryKind::Evaluative), 2);
    assert_eq!(got.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![8, 7]);
    assert_eq!(store.retrieve("a", None, 100).len(), 8);
    assert!(store.retrieve("nobody", None, 5).is_empty());
}

#[test]
fn reflection_window_covers_newest_records() {
    let mut store = MemoryStore::new();
    let stub = make_stub(1);
    for i in 0..7 {
        store
            .write("a", MemoryKind::Factual, payload(json!({"i": i})), i)
            .unwrap();
    }
    let summary = store.reflect("a", 3, 7, stub.as_ref()).unwrap();
    assert_eq!(summary.covering_range, (5, 7));
    assert_eq!(summary.produced_at, 7);
    assert!(!summary.guidance_text.is_empty());
    assert!(matches!(
        store.reflect("b", 3, 7, stub.as_ref()),
        Err(MemoryError::InsufficientData(_))
    ));
}

#[test]
fn reload_rejects_sequence_gaps() {
    let mut store = MemoryStore::new();
    for i in 0..3 {
        store
            .write("a", MemoryKind::Factual, payload(json!({"i": i})), i)
            .unwrap();
    }
    let mut log = Vec::new();
    store.write_log(&mut log).unwrap();
    let text = String::from_utf8(log).unwrap();
    let without_second: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, _)| *i != 1)
        .map(|(_, l)| l)
        .collect();
    assert!(MemoryStore::load(without_second.join("\n").as_bytes(), None::<&[u8]>).is_err());
}

proptest! {
    #[test]
    fn retrieval_is_suffix_of_log(kinds in prop::collection::vec(any::<bool>(), 0..60), last_n in 0usize..80) {
        let mut store = MemoryStore::new();
        for (i, k) in kinds.iter().enumerate() {
            let kind = if *k { MemoryKind::Factual } else { MemoryKind::Evaluative };
            store.write("a", kind, payload(json!({"i": i})), i as u64).unwrap();
        }
        for filter in [None, Some(MemoryKind::Factual), Some(MemoryKind::Evaluative)] {
            let got = store.retrieve("a", filter, last_n);
            let mut oracle: Vec<u64> = kinds
                .iter()
                .enumerate()
                .filter(|(_, k)| match filter {
                    None => true,
                    Some(MemoryKind::Factual) => **k,
                    Some(MemoryKind::Evaluative) => !**k,
                })
                .map(|(i, _)| i as u64 + 1)
                .collect();
            oracle.reverse();
            oracle.truncate(last_n);
            prop_assert_eq!(got.iter().map(|r| r.seq).collect::<Vec<_>>(), oracle);
        }
    }
}
