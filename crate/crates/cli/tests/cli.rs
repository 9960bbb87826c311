//! End-to-end runs of the `envforge` binary: exit codes, outputs, and
//! JSON validated against the shipped schemas.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::JSONSchema;
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn bundle(name: &str) -> PathBuf {
    fixtures().join("bundles").join(name)
}

/// Runs the binary with a private port range so parallel tests never race
/// for the same ports.
fn envforge(port_block: u16, args: &[&str]) -> Output {
    let lo = 43000 + port_block * 100;
    let ports = format!("{lo}-{}", lo + 99);
    Command::new(env!("CARGO_BIN_EXE_envforge"))
        .args(["--ports", &ports])
        .args(args)
        .env_remove("PROVIDER_URL")
        .env_remove("PROVIDER_KEY")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Parses stdout and checks it against `schemas/<name>.schema.json`.
fn json(out: &Output, schema: &str) -> Value {
    let v: Value = serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)));
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let compiled = JSONSchema::compile(&schema).expect("schema compiles");
    if let Err(errors) = compiled.validate(&v) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("output violates {schema} schema: {msgs:?}\n{v:#}");
    }
    v
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A bundle tree holding copies of the named fixture bundles.
fn tree(names: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for n in names {
        copy_dir(&bundle(n), &dir.path().join(n));
    }
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture_traces() -> String {
    s(&fixtures().join("traces.jsonl")).to_string()
}

fn write_tasks(dir: &Path, lines: &[&str]) -> String {
    let p = dir.join("tasks.jsonl");
    fs::write(&p, lines.join("\n")).unwrap();
    s(&p).to_string()
}

#[test]
fn synth_three_tasks_with_mock_seed_7() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bundles");
    let tasks = s(&fixtures().join("tasks.jsonl")).to_string();
    let args = [
        "--format",
        "json",
        "--seed",
        "7",
        "--bundles-dir",
        s(&out_dir),
        "synth",
        "--tasks",
        &tasks,
        "--traces",
        &fixture_traces(),
    ];
    let out = envforge(0, &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out, "synth");
    assert_eq!(v["bundles"], 3);
    assert_eq!(v["verified"], 3);
    let ids: Vec<&str> = v["tasks"].as_array().unwrap().iter().map(|t| t["task_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["weather", "burger", "ride"]);
    for id in ids {
        assert!(out_dir.join(id).join("attempt_1/meta.json").exists());
    }
    assert_eq!(fs::read_to_string(out_dir.join("attempt_logs.jsonl")).unwrap().lines().count(), 3);
    let saved: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("synth_summary.json")).unwrap()).unwrap();
    assert_eq!(saved, v);

    // A freshly synthesized bundle verifies on its own.
    let verify = envforge(0, &["--format", "json", "verify", s(&out_dir.join("ride"))]);
    assert_eq!(code(&verify), 0, "{}", stderr(&verify));
    assert_eq!(json(&verify, "verify")["dynamic_passed"], true);

    // Same seed, same bundles.
    let again_dir = dir.path().join("again");
    let mut again = args;
    again[5] = s(&again_dir);
    assert_eq!(code(&envforge(0, &again)), 0);
    for id in ["weather", "burger", "ride"] {
        let a = fs::read(out_dir.join(id).join("attempt_1/files/app.py")).unwrap();
        let b = fs::read(again_dir.join(id).join("attempt_1/files/app.py")).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn synth_keeps_last_unverified_attempt_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let fail = r#""dynamic_test_failed""#;
    let script = format!(
        r#"{{"id": "weather", "instruction": "Check the weather in Lvliang City for tomorrow", "mock": {{"script": [{fail}, {fail}, {fail}, {fail}, {fail}]}}}}"#
    );
    let tasks = write_tasks(dir.path(), &[&script]);
    let out_dir = dir.path().join("b");
    let out = envforge(
        1,
        &["--format", "json", "--bundles-dir", s(&out_dir), "synth", "--tasks", &tasks, "--traces", &fixture_traces()],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out, "synth");
    let t = &v["tasks"][0];
    assert_eq!((t["attempt"].as_u64(), t["verified"].as_bool()), (Some(5), Some(false)));
    assert_eq!(t["failure_stage"], "dynamic_test_failed");
    assert!(stderr(&out).contains("unverified"), "{}", stderr(&out));
    assert!(out_dir.join("weather/attempt_5/meta.json").exists());
}

#[test]
fn synth_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("b");
    let bd = s(&out_dir).to_string();

    // Nothing ever reaches file generation: zero bundles is an operation failure.
    let m = r#""manifest_invalid""#;
    let line = format!(
        r#"{{"id": "burger", "instruction": "Order a beef burger", "mock": {{"script": [{m}, {m}, {m}, {m}, {m}]}}}}"#
    );
    let tasks = write_tasks(dir.path(), &[&line]);
    let out = envforge(
        2,
        &["--format", "json", "--bundles-dir", &bd, "synth", "--tasks", &tasks, "--traces", &fixture_traces()],
    );
    assert_eq!(code(&out), 1);
    let v = json(&out, "synth");
    assert_eq!(v["bundles"], 0);
    assert_eq!(v["tasks"][0]["failure_stage"], "manifest_invalid");

    let tasks = s(&fixtures().join("tasks.jsonl")).to_string();
    let live = Command::new(env!("CARGO_BIN_EXE_envforge"))
        .args(["--provider", "live", "--bundles-dir", &bd, "synth", "--tasks", &tasks, "--traces", &fixture_traces()])
        .env("PROVIDER_URL", "http://127.0.0.1:9/v1/chat/completions")
        .env_remove("PROVIDER_KEY")
        .output()
        .unwrap();
    assert_eq!(code(&live), 2);
    assert!(stderr(&live).contains("PROVIDER_KEY"));

    assert_eq!(
        code(&envforge(2, &["--bundles-dir", &bd, "synth", "--tasks", &tasks, "--traces", "/no/such/traces"])),
        2
    );
    assert_eq!(code(&envforge(2, &["--bundles-dir", &bd, "synth", "--traces", &fixture_traces()])), 2);
    let bad = write_tasks(dir.path(), &[r#"{"id": "x"}"#]);
    assert_eq!(code(&envforge(2, &["--bundles-dir", &bd, "synth", "--tasks", &bad, "--traces", &fixture_traces()])), 2);
    assert_eq!(
        code(&envforge(
            2,
            &["--bundles-dir", &bd, "synth", "--tasks", &tasks, "--traces", &fixture_traces(), "--k", "0"]
        )),
        2
    );

    // A task without a trace is reported, not fatal.
    let extra = write_tasks(
        dir.path(),
        &[
            r#"{"id": "weather", "instruction": "Check the weather in Lvliang"}"#,
            r#"{"id": "ghost", "instruction": "Nothing recorded"}"#,
        ],
    );
    let out = envforge(
        2,
        &["--format", "json", "--bundles-dir", &bd, "synth", "--tasks", &extra, "--traces", &fixture_traces()],
    );
    assert_eq!(code(&out), 0);
    let v = json(&out, "synth");
    assert_eq!(v["bundles"], 1);
    assert!(v["tasks"][1]["error"].as_str().unwrap().contains("no trace"));
}

#[test]
fn verify_exit_codes() {
    let out = envforge(3, &["--format", "json", "verify", s(&bundle("weather"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out, "verify");
    assert_eq!(v["milestones"].as_array().unwrap().len(), 3);

    let out = envforge(3, &["--format", "json", "verify", s(&bundle("weather_sabotaged"))]);
    assert_eq!(code(&out), 1);
    let v = json(&out, "verify");
    assert_eq!(v["failure_stage"], "milestone_missed");
    assert_eq!(v["failed_step"], 2);

    let out = envforge(3, &["--format", "json", "verify", s(&bundle("broken"))]);
    assert_eq!(code(&out), 1);
    assert_eq!(json(&out, "verify")["failure_stage"], "spawn_failed");

    assert_eq!(code(&envforge(3, &["verify", "/definitely/not/here"])), 2);

    let dir = tree(&["weather"]);
    fs::remove_file(dir.path().join("weather/attempt_1/golden_path.json")).unwrap();
    assert_eq!(code(&envforge(3, &["verify", s(&dir.path().join("weather"))])), 2);

    let table = envforge(3, &["verify", s(&bundle("weather_sabotaged"))]);
    let text = String::from_utf8_lossy(&table.stdout);
    assert!(text.contains("milestone_missed") && text.contains("MISSED"), "{text}");
}

#[test]
fn rollout_policies_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("golden.jsonl");
    let out = envforge(
        4,
        &[
            "--format",
            "json",
            "rollout",
            s(&bundle("weather")),
            "--policy",
            "golden",
            "--episodes",
            "1",
            "--out",
            s(&dump),
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&out, "rollout")["success_rate"], 1.0);
    let line: Value = serde_json::from_str(fs::read_to_string(&dump).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(line["final_reward"], 1.0);

    let dump = dir.path().join("random.jsonl");
    let out = envforge(
        4,
        &[
            "--format",
            "json",
            "rollout",
            s(&bundle("ride")),
            "--policy",
            "random",
            "--episodes",
            "50",
            "--max-steps",
            "20",
            "--out",
            s(&dump),
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    json(&out, "rollout");
    let text = fs::read_to_string(&dump).unwrap();
    assert_eq!(text.lines().count(), 50);
    for l in text.lines() {
        let rec: Value = serde_json::from_str(l).unwrap();
        assert!(rec["steps"].as_array().unwrap().len() <= 20);
    }

    assert_eq!(code(&envforge(4, &["rollout", s(&bundle("weather")), "--episodes", "0"])), 2);
    assert_eq!(code(&envforge(4, &["rollout", s(&bundle("weather")), "--policy", "greedy"])), 2);
    assert_eq!(code(&envforge(4, &["rollout", "/no/bundle"])), 2);
    let out = envforge(4, &["rollout", s(&bundle("broken")), "--out", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn toy_rollouts_are_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let actions = |seed: &str, name: &str| {
        let dump = dir.path().join(name);
        let out = envforge(
            5,
            &[
                "--seed",
                seed,
                "rollout",
                s(&bundle("burger")),
                "--policy",
                "toy",
                "--episodes",
                "6",
                "--max-steps",
                "6",
                "--out",
                s(&dump),
            ],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read_to_string(dump)
            .unwrap()
            .lines()
            .map(|l| {
                let v: Value = serde_json::from_str(l).unwrap();
                (
                    v["steps"].as_array().unwrap().iter().map(|s| s["action"].clone()).collect::<Vec<_>>(),
                    v["final_reward"].clone(),
                )
            })
            .collect::<Vec<_>>()
    };
    let a = actions("3", "a.jsonl");
    assert_eq!(a, actions("3", "b.jsonl"));
    assert_ne!(a, actions("4", "c.jsonl"));
}

#[test]
fn train_improves_on_reference_kit() {
    let kit = tree(&["weather", "burger", "ride"]);
    let report = kit.path().join("report.json");
    let out =
        envforge(6, &["--format", "json", "--seed", "7", "--bundles-dir", s(kit.path()), "train", "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out, "train");
    assert_eq!(v["iterations"].as_array().unwrap().len(), 30);
    let first = v["iterations"][0]["mean_success"].as_f64().unwrap();
    let last = v["final_eval"]["mean_success"].as_f64().unwrap();
    assert!(last > first, "final {last} vs first {first}");
    let saved: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn train_is_byte_identical_under_a_fixed_seed() {
    let kit = tree(&["weather", "burger"]);
    let run = |name: &str| {
        let report = kit.path().join(name);
        let out = envforge(
            7,
            &[
                "--seed",
                "11",
                "--bundles-dir",
                s(kit.path()),
                "train",
                "--iterations",
                "3",
                "--group-size",
                "4",
                "--eval-episodes",
                "4",
                "--out",
                s(&report),
            ],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read(report).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn train_exit_codes() {
    let kit = tree(&["counter"]);
    let bd = s(kit.path()).to_string();
    let out = envforge(8, &["--bundles-dir", &bd, "train", "--iterations", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not verified"));
    let out = envforge(
        8,
        &[
            "--format",
            "json",
            "--bundles-dir",
            &bd,
            "train",
            "--allow-unverified",
            "--iterations",
            "1",
            "--group-size",
            "2",
            "--eval-episodes",
            "1",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&out, "train")["param_change"], 0.0);

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&envforge(8, &["--bundles-dir", s(empty.path()), "train"])), 2);
    assert_eq!(code(&envforge(8, &["--bundles-dir", "/no/such/dir", "train"])), 2);
    assert_eq!(code(&envforge(8, &["--bundles-dir", &bd, "train", "--allow-unverified", "--group-size", "1"])), 2);
}

#[test]
fn cost_report() {
    let out = envforge(9, &["--format", "json", "report", "--kind", "cost"]);
    assert_eq!(code(&out), 0);
    let v = json(&out, "report_cost");
    assert_eq!(v["epoch"]["total"], 27_869.28);
    assert_eq!(v["epoch"]["trajectories"], 12_000);
    assert!(v["epoch"]["headline_residual"].as_f64().unwrap().abs() <= 0.02);
    assert_eq!(v["device"]["total"], 24_480.0);

    let table = envforge(9, &["report", "--kind", "cost"]);
    let text = String::from_utf8_lossy(&table.stdout);
    assert!(text.contains("$27,869.28") && text.contains("-0.47%"), "{text}");

    let synth = envforge(9, &["--format", "json", "report", "--kind", "cost", "--regime", "synth"]);
    assert_eq!(json(&synth, "report_cost")["epoch"]["total"], 0.0);
}

#[test]
fn fixture_reports() {
    let csv = s(&fixtures().join("alignment.csv")).to_string();
    let out = envforge(9, &["--format", "json", "report", "--kind", "alignment", "--input", &csv]);
    assert_eq!(code(&out), 0);
    let v = json(&out, "report_alignment");
    assert_eq!(v["classes"][0]["frac_le_0_6"], 0.75);
    assert!(v["classes"][1]["frac_gt_0_8"].as_f64().unwrap() >= 0.75);

    let traj = s(&fixtures().join("trajectories.jsonl")).to_string();
    let out = envforge(9, &["--format", "json", "report", "--kind", "lengths", "--input", &traj, "--clip", "20"]);
    let v = json(&out, "report_lengths");
    assert!((v["mean"].as_f64().unwrap() - 5.63).abs() <= 0.01);
    assert_eq!(v["removed"], 60);

    let out = envforge(9, &["--format", "json", "report", "--kind", "latency", "--input", &traj]);
    assert_eq!(json(&out, "report_latency")["per_interaction_s"]["n"], 1060);
}

#[test]
fn attempts_report_from_synth_logs() {
    let dir = tempfile::tempdir().unwrap();
    let fail = r#""file_invalid""#;
    let tasks = write_tasks(
        dir.path(),
        &[
            r#"{"id": "weather", "instruction": "Check the weather in Lvliang City for tomorrow"}"#,
            &format!(
                r#"{{"id": "burger", "instruction": "Order a beef burger without onions", "mock": {{"script": [{fail}, "pass"]}}}}"#
            ),
        ],
    );
    let bd = dir.path().join("b");
    assert_eq!(
        code(&envforge(10, &["--bundles-dir", s(&bd), "synth", "--tasks", &tasks, "--traces", &fixture_traces()])),
        0
    );
    let logs = s(&bd.join("attempt_logs.jsonl")).to_string();
    let out = envforge(10, &["--format", "json", "report", "--kind", "attempts", "--input", &logs, "--p", "0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out, "report_attempts");
    assert_eq!(v["per_attempt_fraction"]["1"], 0.5);
    assert_eq!(v["per_attempt_fraction"]["2"], 0.5);
    assert_eq!(v["failed_attempts_by_stage"]["file_invalid"], 1);
    assert_eq!(v["expected"]["per_attempt"]["1"], 0.5);
}

#[test]
fn report_usage_errors() {
    assert_eq!(code(&envforge(11, &["report", "--kind", "bogus"])), 2);
    assert_eq!(code(&envforge(11, &["report", "--kind", "alignment"])), 2);
    assert_eq!(code(&envforge(11, &["report", "--kind", "alignment", "--input", "/no/file.csv"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "label,reward\n0,0.1\n").unwrap();
    assert_eq!(code(&envforge(11, &["report", "--kind", "alignment", "--input", s(&bad)])), 2);
    assert_eq!(code(&envforge(11, &["report", "--kind", "lengths", "--input", s(&bad)])), 2);
    assert_eq!(code(&envforge(11, &["report", "--kind", "cost", "--n-envs", "0"])), 2);
    assert_eq!(code(&envforge(11, &["report", "--kind", "attempts", "--input", s(&bad), "--p", "2"])), 2);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let tasks = s(&fixtures().join("tasks.jsonl")).to_string();
    fs::write(
        &cfg,
        format!(
            "seed = 3\nbundles_dir = {:?}\ntasks_path = {:?}\ntraces_path = {:?}\n[synth]\nk = 2\n",
            s(&dir.path().join("from_file")),
            tasks,
            fixture_traces()
        ),
    )
    .unwrap();
    let out = envforge(12, &["--format", "json", "--config", s(&cfg), "synth"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out, "synth");
    assert_eq!((v["seed"].as_u64(), v["k"].as_u64()), (Some(3), Some(2)));
    assert!(dir.path().join("from_file/synth_summary.json").exists());

    let out = envforge(12, &["--format", "json", "--config", s(&cfg), "--seed", "9", "synth", "--k", "4"]);
    let v = json(&out, "synth");
    assert_eq!((v["seed"].as_u64(), v["k"].as_u64()), (Some(9), Some(4)));
    assert_eq!(v["provider"], "mock(seed=9)");

    fs::write(&cfg, "seed = \"three\"\n").unwrap();
    assert_eq!(code(&envforge(12, &["--config", s(&cfg), "report", "--kind", "cost"])), 2);
    assert_eq!(code(&envforge(12, &["--config", "/no/such.toml", "report", "--kind", "cost"])), 2);
    let reversed =
        Command::new(env!("CARGO_BIN_EXE_envforge")).args(["--ports", "9-1", "report", "--kind", "cost"]).output();
    assert_eq!(code(&reversed.unwrap()), 2);
    assert_eq!(code(&envforge(12, &["--max-live", "0", "report", "--kind", "cost"])), 2);
}
