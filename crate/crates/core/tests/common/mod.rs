//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use forgesim::profile::ForgeryRecord;
use forgesim::rational::Rational;
use rand::Rng;

/// Random metadata table with `creators` creators, `methods` methods and `targets` targets.
pub fn toy_table(seed: u64, n: usize, creators: usize, methods: usize, targets: usize) -> Vec<ForgeryRecord> {
    let mut rng = forgesim::rng::stream(seed, "toy-table", "records");
    (0..n)
        .map(|i| {
            ForgeryRecord::new(
                &format!("rec{i:06}"),
                &format!("creator{:03}", rng.random_range(0..creators)),
                &format!("method{:02}", rng.random_range(0..methods)),
                &format!("target{:04}", rng.random_range(0..targets)),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTraits {
    pub freq: u64,
    pub diversity: u64,
    /// Unreduced (numerator, denominator).
    pub conformity: (i128, i128),
}

/// Traits per creator from sorted columns and binary-search counting.
pub fn oracle_traits(records: &[ForgeryRecord]) -> BTreeMap<String, OracleTraits> {
    let mut all_targets: Vec<&str> = records.iter().map(|r| r.target_id.as_str()).collect();
    all_targets.sort_unstable();
    let pop = |t: &str| {
        let lo = all_targets.partition_point(|x| *x < t);
        let hi = all_targets.partition_point(|x| *x <= t);
        (hi - lo) as i128
    };
    let mut by_creator: BTreeMap<&str, Vec<&ForgeryRecord>> = BTreeMap::new();
    for r in records {
        by_creator.entry(r.creator_id.as_str()).or_default().push(r);
    }
    by_creator
        .into_iter()
        .map(|(c, rs)| {
            let mut methods: Vec<&str> = rs.iter().map(|r| r.method_id.as_str()).collect();
            methods.sort_unstable();
            methods.dedup();
            let total: i128 = rs.iter().map(|r| pop(&r.target_id)).sum();
            (
                c.to_string(),
                OracleTraits {
                    freq: rs.len() as u64,
                    diversity: methods.len() as u64,
                    conformity: (total, rs.len() as i128),
                },
            )
        })
        .collect()
}

/// Cross-multiplied `l * a + (1 - l) * b` on (numerator, denominator) pairs.
pub fn fuse_oracle(l: (i128, i128), a: (i128, i128), b: (i128, i128)) -> Rational {
    let (ln, ld) = l;
    let (an, ad) = a;
    let (bn, bd) = b;
    let num = ln * an * bd + (ld - ln) * bn * ad;
    let den = ld * ad * bd;
    Rational::new(num, den)
}

/// Sort, then take rank `max(1, ceil(q * n))` with integer arithmetic on `q = qn / qd`.
pub fn quantile_oracle(values: &[Rational], qn: i128, qd: i128) -> Rational {
    let mut v = values.to_vec();
    v.sort();
    let n = v.len() as i128;
    let rank = ((qn * n + qd - 1) / qd).max(1);
    v[(rank - 1) as usize]
}

/// Chi-square statistic of observed counts against equal expected counts.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Writes a metadata CSV, builds profiles with the seeded stub, and writes a
/// run config pointing at them. Returns the config path.
pub fn write_run(dir: &Path, seed: u64, real: u64, forged: u64, extra_toml: &str) -> PathBuf {
    let table = toy_table(seed, 120, 6, 5, 15);
    let meta = dir.join("meta.csv");
    let mut w = csv::Writer::from_path(&meta).unwrap();
    for r in &table {
        w.serialize(r).unwrap();
    }
    w.flush().unwrap();
    let profiles = forgesim::profile::build_profiles(
        &table,
        &forgesim::profile::ProfileConfig {
            style_sample_size: 5,
            rng_seed: seed,
        },
        forgesim::backends::make_stub(seed).as_ref(),
    )
    .unwrap();
    let mut buf = Vec::new();
    forgesim::profile::write_profiles(&profiles, &mut buf).unwrap();
    std::fs::write(dir.join("profiles.jsonl"), buf).unwrap();
    let cfg = format!(
        "seed = {seed}\noutput_dir = \"out\"\n{extra_toml}\n[targets]\nreal = {real}\nforged = {forged}\n\n[agents]\nprofiles = \"profiles.jsonl\"\n"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// A blueprint built with the stub backends from a neutral profile.
pub fn blueprint(seed: u64, tick: u64, intent: forgesim::actions::Intent) -> forgesim::actions::ForgeryBlueprint {
    use forgesim::actions::*;
    let tb = Toolbox::builtin();
    let stub = forgesim::backends::make_stub(seed);
    let mut rng = forgesim::rng::stream(seed, "test-blueprint", &tick.to_string());
    let chain = sample_operator_chain(
        &forgesim::profile::AgentProfile::neutral("agent"),
        &tb,
        &forgesim::profile::ToolWeighting::default(),
        &[],
        &ChainConfig::default(),
        &mut rng,
    )
    .unwrap();
    let source = format!("real/{tick:06}.png");
    let result = apply_chain(&source, &chain, &tb, 3, stub.as_ref()).unwrap();
    let description = generate_description(&result, &chain, intent, "agent", stub.as_ref()).unwrap();
    assemble_blueprint(&source, &result, chain, description, intent, "agent", tick)
}
