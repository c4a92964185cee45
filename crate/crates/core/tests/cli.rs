mod common;

use std::path::Path;
use std::process::{Command, Output};

fn forgesim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forgesim"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn toy_table(dir: &Path) {
    std::fs::write(
        dir.join("toy.csv"),
        "record_id,creator_id,method_id,target_id\nr1,c1,A,X\nr2,c1,B,X\nr3,c1,A,Y\nr4,c2,A,X\n",
    )
    .unwrap();
}

fn stats_map(text: &str) -> std::collections::BTreeMap<String, String> {
    text.lines()
        .map(|l| {
            let (k, v) = l.split_once('\t').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

#[test]
fn profile_extract_on_toy_table() {
    let dir = tempfile::tempdir().unwrap();
    toy_table(dir.path());
    let o = forgesim(
        dir.path(),
        &[
            "profile-extract",
            "--metadata",
            "toy.csv",
            "--out",
            "p.jsonl",
            "--seed",
            "3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let profiles = forgesim::profile::read_profiles(std::fs::File::open(dir.path().join("p.jsonl")).unwrap()).unwrap();
    assert_eq!(profiles.len(), 2);
    let c1 = &profiles[0];
    assert_eq!(c1.agent_id, "c1");
    assert_eq!(c1.trait_vector(), (3, 2, forgesim::rational::Rational::new(7, 3)));
    assert_eq!(profiles[1].conformity, forgesim::rational::Rational::from_integer(3));
}

#[test]
fn style_sample_of_one_shows_one_record() {
    let dir = tempfile::tempdir().unwrap();
    toy_table(dir.path());
    let o = forgesim(
        dir.path(),
        &[
            "profile-extract",
            "--metadata",
            "toy.csv",
            "--out",
            "p.jsonl",
            "--style-sample",
            "1",
        ],
    );
    assert_eq!(code(&o), 0);
    let profiles = forgesim::profile::read_profiles(std::fs::File::open(dir.path().join("p.jsonl")).unwrap()).unwrap();
    let text = &profiles[0].style_text;
    let methods = text
        .split(" works with ")
        .nth(1)
        .unwrap()
        .split(" and favors")
        .next()
        .unwrap();
    assert!(!methods.contains(','), "{text}");
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = forgesim(
        dir.path(),
        &["profile-extract", "--metadata", "missing.csv", "--out", "p.jsonl"],
    );
    assert_eq!(code(&o), 2);
    assert!(!stderr(&o).is_empty());
    assert_eq!(code(&forgesim(dir.path(), &["generate", "--config", "nope.toml"])), 2);
    assert_eq!(code(&forgesim(dir.path(), &["stats", "--manifest", "nope.jsonl"])), 2);
    assert_eq!(
        code(&forgesim(dir.path(), &["generate", "--config", "x", "--bogus"])),
        2
    );
    assert_eq!(code(&forgesim(dir.path(), &[])), 2);
    assert_eq!(code(&forgesim(dir.path(), &["--help"])), 0);
}

#[test]
fn generate_writes_target_blueprints() {
    let dir = tempfile::tempdir().unwrap();
    common::write_run(dir.path(), 21, 0, 20, "");
    let o = forgesim(dir.path(), &["generate", "--config", "run.toml", "--stub-backends"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/blueprints.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 20);
}

#[test]
fn staged_commands_equal_combined_run_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    common::write_run(dir.path(), 22, 6, 15, "");
    let run = |args: &[&str]| {
        let o = forgesim(dir.path(), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        stdout(&o)
    };
    let manifest = || std::fs::read(dir.path().join("out/manifest.jsonl")).unwrap();

    let first = run(&["run", "--config", "run.toml", "--stub-backends"]);
    let combined = manifest();
    assert_eq!(run(&["run", "--config", "run.toml", "--stub-backends"]), first);

    run(&["generate", "--config", "run.toml", "--stub-backends"]);
    run(&["socialize", "--config", "run.toml", "--stub-backends"]);
    run(&["emit", "--config", "run.toml", "--stub-backends"]);
    assert_eq!(manifest(), combined);

    let halted = run(&[
        "generate",
        "--config",
        "run.toml",
        "--stub-backends",
        "--halt-after",
        "9",
    ]);
    assert!(halted.contains("halted after 9"), "{halted}");
    run(&[
        "generate",
        "--config",
        "run.toml",
        "--stub-backends",
        "--resume",
        "out/phase1.ckpt",
    ]);
    run(&["socialize", "--config", "run.toml", "--stub-backends"]);
    run(&["emit", "--config", "run.toml", "--stub-backends"]);
    assert_eq!(manifest(), combined);
}

#[test]
fn emit_before_socialize_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    common::write_run(dir.path(), 23, 2, 3, "");
    let o = forgesim(dir.path(), &["emit", "--config", "run.toml", "--stub-backends"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn iteration_cap_exits_four_with_stats() {
    let dir = tempfile::tempdir().unwrap();
    common::write_run(dir.path(), 24, 0, 5, "iteration_cap = 100\n[ars]\ntau_warmup = 1\n");
    let o = forgesim(dir.path(), &["generate", "--config", "run.toml", "--stub-backends"]);
    assert_eq!(code(&o), 4);
    let err = stderr(&o);
    assert!(err.contains("iteration cap of 100"), "{err}");
    assert!(err.contains("0/5 blueprints accepted"), "{err}");
    assert!(err.contains("acceptance rate 0.0000"), "{err}");
}

#[test]
fn unreachable_backend_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("endpoint_url = \"http://127.0.0.1:{port}\"\nmax_retries = 0\n");
    common::write_run(
        dir.path(),
        25,
        0,
        3,
        &format!("[backends.cognition]\n{endpoint}[backends.detector]\n{endpoint}[backends.edit]\n{endpoint}"),
    );
    let o = forgesim(dir.path(), &["generate", "--config", "run.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = forgesim(dir.path(), &["generate", "--config", "run.toml", "--stub-backends"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    toy_table(dir.path());
    let url = format!("http://127.0.0.1:{port}");
    let o = forgesim(
        dir.path(),
        &[
            "profile-extract",
            "--metadata",
            "toy.csv",
            "--out",
            "p.jsonl",
            "--cognition-url",
            &url,
        ],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn stats_report_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    common::write_run(dir.path(), 26, 10, 20, "");
    assert_eq!(
        code(&forgesim(
            dir.path(),
            &["run", "--config", "run.toml", "--stub-backends"]
        )),
        0
    );
    let args = [
        "stats",
        "--manifest",
        "out/manifest.jsonl",
        "--ars-trace",
        "out/ars_trace.csv",
        "--format",
        "tsv",
    ];
    let o = forgesim(dir.path(), &args);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&forgesim(dir.path(), &args)), stdout(&o));
    let m = stats_map(&stdout(&o));
    let n = |k: &str| m[k].parse::<u64>().unwrap();
    assert_eq!(n("real") + n("forged"), n("samples"));
    assert_eq!(n("delta_1") + n("delta_0"), n("samples"));
    assert_eq!(n("real"), 10);
    assert_eq!(n("accepted"), 20);

    let trace = forgesim::ars::read_trace(std::fs::File::open(dir.path().join("out/ars_trace.csv")).unwrap()).unwrap();
    assert_eq!(m["final_tau"], trace.last().unwrap().tau.to_string());
    assert_eq!(n("attempts"), trace.len() as u64);

    let text = stdout(&forgesim(dir.path(), &args[..5]));
    assert!(text.lines().all(|l| l.contains(": ")));
}
