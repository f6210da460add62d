//! End-to-end flows: resumption, report recomputation, manifest guards,
//! and binary exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use conviction_cli::{cmd_report, cmd_run, cmd_simulate, cmd_validate, CliError, RunConfig};
use conviction_core::runner::read_transcript_log;
use conviction_core::testing::{StubReply, StubServer};

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("conviction-flow-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn sim_config_body(out: &std::path::Path, seed: u64) -> String {
    format!(
        r#"
[run]
out_dir = "{}"
n = 30
master_seed = {seed}
conditions = ["single_shot_binary", "positive_conviction"]
concurrency = 4

[respondent]
kind = "bernoulli"
q_init = 0.8
p_stick = 0.7
agent_seed = 21
"#,
        out.display()
    )
}

#[test]
fn interrupted_run_resumes_to_identical_bytes() {
    let dir = work_dir("resume");
    let full_out = dir.join("full");
    let resumed_out = dir.join("resumed");

    let full_cfg = RunConfig::load(&write_config(
        &dir,
        "full.toml",
        &sim_config_body(&full_out, 5),
    ))
    .unwrap();
    cmd_simulate(&full_cfg).unwrap();
    let full_log = std::fs::read_to_string(full_out.join("transcripts.jsonl")).unwrap();

    // Simulate an interruption: keep the manifest plus the first 40 of the
    // 90 transcript lines.
    let prefix: Vec<&str> = full_log.lines().take(41).collect();
    std::fs::create_dir_all(&resumed_out).unwrap();
    std::fs::write(
        resumed_out.join("transcripts.jsonl"),
        prefix.join("\n") + "\n",
    )
    .unwrap();

    let resumed_cfg = RunConfig::load(&write_config(
        &dir,
        "resumed.toml",
        &sim_config_body(&resumed_out, 5),
    ))
    .unwrap();
    let outcome = cmd_run(&resumed_cfg, true).unwrap();
    assert_eq!(outcome.new_transcripts, 50);
    assert_eq!(outcome.total_transcripts, 90);

    let resumed_log = std::fs::read_to_string(resumed_out.join("transcripts.jsonl")).unwrap();
    assert_eq!(
        resumed_log, full_log,
        "resume must reproduce the full log byte for byte"
    );

    // Every planned conversation appears exactly once.
    let (_, transcripts) = read_transcript_log(&resumed_out.join("transcripts.jsonl")).unwrap();
    let mut keys: Vec<String> = transcripts
        .iter()
        .map(|t| format!("{}|{}|{:?}", t.record_id, t.condition, t.target))
        .collect();
    let total = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), total, "no conversation may run twice");
}

#[test]
fn resume_refuses_a_foreign_log() {
    let dir = work_dir("resume-guard");
    let out = dir.join("out");
    let cfg_a = RunConfig::load(&write_config(&dir, "a.toml", &sim_config_body(&out, 5))).unwrap();
    cmd_simulate(&cfg_a).unwrap();

    // Same output dir, different master seed: the manifest no longer
    // matches and resuming must refuse.
    let cfg_b = RunConfig::load(&write_config(&dir, "b.toml", &sim_config_body(&out, 6))).unwrap();
    let err = cmd_run(&cfg_b, true).unwrap_err();
    assert!(matches!(err, CliError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn report_recomputation_is_byte_identical() {
    let dir = work_dir("report");
    let out = dir.join("run");
    let cfg = RunConfig::load(&write_config(&dir, "cfg.toml", &sim_config_body(&out, 9))).unwrap();
    cmd_simulate(&cfg).unwrap();
    let run_report = std::fs::read(out.join("report.json")).unwrap();

    let re_out_1 = dir.join("re1");
    let re_out_2 = dir.join("re2");
    cmd_report(&[out.join("transcripts.jsonl")], &re_out_1, false).unwrap();
    cmd_report(&[out.join("transcripts.jsonl")], &re_out_2, false).unwrap();

    let re_1 = std::fs::read(re_out_1.join("report.json")).unwrap();
    let re_2 = std::fs::read(re_out_2.join("report.json")).unwrap();
    assert_eq!(re_1, re_2, "recomputing twice must be byte-identical");
    assert_eq!(
        re_1, run_report,
        "recomputed report must match the run-time report"
    );
}

#[test]
fn mixed_manifests_need_an_override() {
    let dir = work_dir("mixed");
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    let cfg_a =
        RunConfig::load(&write_config(&dir, "a.toml", &sim_config_body(&out_a, 5))).unwrap();
    let cfg_b =
        RunConfig::load(&write_config(&dir, "b.toml", &sim_config_body(&out_b, 6))).unwrap();
    cmd_simulate(&cfg_a).unwrap();
    cmd_simulate(&cfg_b).unwrap();

    let logs = vec![
        out_a.join("transcripts.jsonl"),
        out_b.join("transcripts.jsonl"),
    ];
    let err = cmd_report(&logs, &dir.join("merged"), false).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));

    let outcome = cmd_report(&logs, &dir.join("merged"), true).unwrap();
    assert_eq!(outcome.total_transcripts, 180);
}

#[test]
fn validate_reports_failures_with_remediation() {
    let dir = work_dir("validate");
    let cfg = RunConfig::load(&write_config(
        &dir,
        "missing.toml",
        &format!(
            r#"
[run]
out_dir = "{}"
n = 10
conditions = ["positive_conviction"]

[[dataset]]
path = "{}"
tag = "medqa"

[respondent]
kind = "bernoulli"
"#,
            dir.join("out").display(),
            dir.join("nonexistent.jsonl").display()
        ),
    ))
    .unwrap();
    let report = cmd_validate(&cfg).unwrap();
    assert!(!report.passed());
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.ok).collect();
    assert!(failed.iter().any(|c| c.name.contains("dataset")));
}

#[test]
fn transport_failures_preserve_partial_outputs() {
    let dir = work_dir("transport");
    let stub = StubServer::start();
    // One successful ping for validation is not needed here; make every
    // run request fail so all conversations end in transport errors.
    for _ in 0..400 {
        stub.push_reply(StubReply::Status(500));
    }

    let records = conviction_core::corpus::synthetic_records(10, 4, 3);
    let data_path = dir.join("data.jsonl");
    let lines: Vec<String> = records
        .iter()
        .map(|r| {
            serde_json::json!({
                "id": r.id, "question": r.question, "options": r.options,
                "answer": r.truth_label, "dataset": "custom",
            })
            .to_string()
        })
        .collect();
    std::fs::write(&data_path, lines.join("\n") + "\n").unwrap();

    let out = dir.join("out");
    let cfg = RunConfig::load(&write_config(
        &dir,
        "cfg.toml",
        &format!(
            r#"
[run]
out_dir = "{}"
n = 5
master_seed = 1
conditions = ["single_shot_binary"]
concurrency = 2

[[dataset]]
path = "{}"
tag = "custom"

[respondent]
kind = "remote"
base_url = "{}"
model = "stub-model"
max_retries = 1
initial_backoff_ms = 5
backoff_factor = 2.0
"#,
            out.display(),
            data_path.display(),
            stub.url()
        ),
    ))
    .unwrap();

    let err = cmd_run(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 2, "runtime failure, not a validation one");

    // The transcript log survives with every conversation marked as a
    // transport error.
    let (_, transcripts) = read_transcript_log(&out.join("transcripts.jsonl")).unwrap();
    assert_eq!(transcripts.len(), 10);
    assert!(transcripts.iter().all(|t| t.outcome.is_transport_error()));
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let dir = work_dir("binary");
    let bin = env!("CARGO_BIN_EXE_conviction");

    // Unreadable config: validation failure, exit 1.
    let status = Command::new(bin)
        .args(["validate", "--config", "/does/not/exist.toml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // A healthy simulate run: exit 0 and outputs in place.
    let out = dir.join("out");
    let cfg_path = write_config(&dir, "ok.toml", &sim_config_body(&out, 7));
    let status = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("report.json").exists());
    assert!(out.join("summary.csv").exists());

    // Seed override via the flag changes the manifest.
    let out2 = dir.join("out2");
    let status = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(&cfg_path)
        .args(["--out"])
        .arg(&out2)
        .args(["--seed", "99"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let (manifest, _) = read_transcript_log(&out2.join("transcripts.jsonl")).unwrap();
    assert_eq!(manifest.master_seed, 99);

    // Report over the simulate output: exit 0.
    let status = Command::new(bin)
        .args(["report", "--out"])
        .arg(dir.join("rep"))
        .arg(out.join("transcripts.jsonl"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}
