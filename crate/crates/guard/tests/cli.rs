use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use guard::config::load_config;
use guard::harness::{ablation_base, run_ablation};
use guard::report::ablation_csv;
use guard::trace::{read_trace, TRACE_FILES};
use guard::wire::read_metrics;
use guard_core::detector::detect_stream;
use guard_core::eval::HumanCosts;
use guard_core::event::Event;
use guard_core::policy::PoolStatus;
use guard_core::triage::TriageStage;
use tempfile::TempDir;

fn guard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guard"))
        .args(args)
        .env_remove("GUARD_CONFIG")
        .env_remove("GUARD_STATE")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn events(o: &Output) -> Vec<Event> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const FAULTY: &str = r#"
node_count = 8
spare_count = 2
horizon_steps = 200

[[faults]]
node = "n002"
onset_step = 20
fault = { kind = "thermal", gpu = 4, temp_c = 78.0 }
"#;

#[test]
fn run_writes_a_trace_that_eval_reads() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", FAULTY);
    let out = dir.path().join("trace");
    let o = guard(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in TRACE_FILES {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let o = guard(&["eval", "--trace", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["detection"]["positives"], 1);
    assert_eq!(doc["detection"]["false_negatives"], 0);
    assert!(doc["reliability"].is_object());
}

#[test]
fn eval_threshold_miss_exits_2() {
    let dir = TempDir::new().unwrap();
    let text = format!("{FAULTY}\n[features]\nonline_monitoring = false\n");
    let cfg = write(dir.path(), "c.toml", &text);
    let out = dir.path().join("trace");
    assert_eq!(
        code(&guard(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let o = guard(&["eval", "--trace", out.to_str().unwrap(), "--max-fnr", "0.5"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    // The report is still printed.
    assert!(stdout(&o).contains("\"fnr\": 1.0"));
}

#[test]
fn bad_config_exits_1_with_a_hint() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", "nodes = 3\n");
    let o = guard(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("t").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nodes") && err.contains("guard config"), "{err}");
    assert_eq!(code(&guard(&["no-such-command"])), 1);
}

#[test]
fn config_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "seed = 42\nnode_count = 4\nspare_count = 0\nhorizon_steps = 20\n",
    );
    let out = dir.path().join("trace");
    let o = Command::new(env!("CARGO_BIN_EXE_guard"))
        .args(["run", "--out", out.to_str().unwrap()])
        .env("GUARD_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let trace = read_trace(&out, false).unwrap();
    assert_eq!(trace.summary.seed, 42);
    assert_eq!(trace.steps.len(), 20);
}

#[test]
fn detect_replays_metrics_into_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", FAULTY);
    let out = dir.path().join("trace");
    assert_eq!(
        code(&guard(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let metrics = out.join("metrics.jsonl");
    let o = guard(&[
        "detect",
        "--metrics",
        metrics.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let got = events(&o);
    assert!(!got.is_empty());
    for e in &got {
        assert!(
            matches!(e, Event::Flag { node, .. } if node.as_str() == "n002"),
            "{e:?}"
        );
    }
    // Same flags as the library on the same samples.
    let samples = read_metrics(std::io::BufReader::new(fs::File::open(&metrics).unwrap()), false).unwrap();
    let c = load_config(&cfg).unwrap();
    let direct = detect_stream(samples, c.ingest, c.detector).unwrap();
    assert_eq!(got.len(), direct.len());
}

#[test]
fn strict_detect_rejects_unknown_fields() {
    let dir = TempDir::new().unwrap();
    let metrics = write(
        dir.path(),
        "m.jsonl",
        "{\"node\":\"a\",\"gpu\":0,\"kind\":\"gpu_temp_c\",\"t\":0,\"v\":50,\"extra\":1}\n",
    );
    let m = metrics.to_str().unwrap();
    assert_eq!(code(&guard(&["detect", "--metrics", m])), 0);
    let o = guard(&["detect", "--metrics", m, "--strict"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn ablate_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let text = "node_count = 8\nspare_count = 2\nhorizon_steps = 400\n\n[background]\nrate_per_node_h = 0.3\n";
    let cfg = write(dir.path(), "c.toml", text);
    let o = guard(&["ablate", "--config", cfg.to_str().unwrap(), "--seeds", "1,2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let want = run_ablation(&load_config(&cfg).unwrap(), &[1, 2], &HumanCosts::default()).unwrap();
    assert_eq!(stdout(&o), ablation_csv(&want.rows));
}

#[test]
fn triage_walks_the_workflow_and_terminate_is_final() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state");
    let st = state.to_str().unwrap();

    // Errors twice, then clean: reboot, reprovision, back for a sweep.
    let mut stages = Vec::new();
    for (signal, t) in [("errors", "10"), ("errors", "20"), ("clean", "30")] {
        let o = guard(&["triage", "--node", "n001", "--signal", signal, "--t", t, "--state", st]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for e in events(&o) {
            if let Event::Triage { to, .. } = e {
                stages.push(to);
            }
        }
    }
    assert_eq!(
        stages,
        [
            TriageStage::RebootRedeployDrivers,
            TriageStage::Reprovision,
            TriageStage::ReturnForSweep
        ]
    );

    // Going back in time is refused.
    let o = guard(&[
        "triage", "--node", "n001", "--signal", "clean", "--t", "5", "--state", st,
    ]);
    assert_eq!(code(&o), 1);

    let o = guard(&["terminate", "--node", "n001", "--reason", "bad board", "--state", st]);
    assert_eq!(code(&o), 0);
    let evs = events(&o);
    assert!(evs.iter().any(|e| matches!(
        e,
        Event::Transition {
            to: PoolStatus::Terminated,
            ..
        }
    )));
    assert_eq!(
        code(&guard(&[
            "triage", "--node", "n001", "--signal", "clean", "--state", st
        ])),
        1
    );
    assert_eq!(
        code(&guard(&[
            "terminate",
            "--node",
            "n001",
            "--reason",
            "again",
            "--state",
            st
        ])),
        1
    );

    // The log holds every accepted event, in order.
    let log = fs::read_to_string(state.join("events.jsonl")).unwrap();
    let ts: Vec<f64> = log
        .lines()
        .map(|l| serde_json::from_str::<Event>(l).unwrap().t())
        .collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(ts.len(), 6);
}

#[test]
fn unknown_node_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let st = dir.path().join("state");
    let o = guard(&[
        "triage",
        "--node",
        "zz9",
        "--signal",
        "clean",
        "--state",
        st.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn shipped_configs_load() {
    let mut seen = 0;
    for entry in fs::read_dir(repo_configs()).unwrap() {
        let p = entry.unwrap().path();
        load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        seen += 1;
    }
    assert!(seen >= 3);
    assert_eq!(
        load_config(&repo_configs().join("ablation.toml")).unwrap(),
        ablation_base()
    );
}

#[test]
fn default_config_round_trips_through_the_cli() {
    let o = guard(&["config"]);
    assert_eq!(code(&o), 0);
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "d.toml", &stdout(&o));
    assert_eq!(load_config(&p).unwrap(), guard_core::sim::ScenarioConfig::default());
}
