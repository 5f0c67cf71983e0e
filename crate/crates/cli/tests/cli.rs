mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use transit_ask::bench_io::{load_tasks, read_report};
use transit_ask_core::bench::Score;
use transit_ask_core::llm::{StubEntry, StubScript};
use transit_ask_core::prompt::RoleTag;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transit-ask")).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn prepare(dir: &Path) {
    let fixture = common::fixture_dir();
    let stdout = ok(bin(&["prepare-feed", "--in", fixture.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--feed-id", "cumtd"]));
    assert!(stdout.starts_with("cumtd -> "), "{stdout}");
    assert!(stdout.contains("stop_times"));
}

#[test]
fn prepare_then_gold_benchmark_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let feeds = tmp.path().join("feeds");
    std::fs::create_dir(&feeds).unwrap();
    prepare(&feeds);
    assert!(feeds.join("cumtd.feedcache").is_file());

    let out = tmp.path().join("report.json");
    let tasks = common::seed_tasks_path();
    let table = ok(bin(&[
        "bench", "run", "--tasks", tasks.to_str().unwrap(), "--model", "stub:gold", "--feeds-dir",
        feeds.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "4",
    ]));
    assert!(table.contains("| Summary |"), "{table}");

    let report = read_report(&out).unwrap();
    let n = load_tasks(&tasks, None).unwrap().len();
    assert_eq!(report.results.len(), n);
    assert_eq!(report.overall.alpha, Some(1.0));
    assert!(report.results.iter().all(|r| r.score != Score::Fail));

    let json: Value = serde_json::from_str(&ok(bin(&["bench", "report", "--in", out.to_str().unwrap(), "--format", "json"]))).unwrap();
    assert_eq!(json["overall"]["n"], n);
    let again = ok(bin(&["bench", "report", "--in", out.to_str().unwrap()]));
    assert_eq!(again, table);
}

#[test]
fn scripted_stub_run_in_baseline_mode() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());

    // One task: a stop lookup by name, answered by a script.
    let all = load_tasks(&common::seed_tasks_path(), None).unwrap();
    let task = all.iter().find(|t| t.task_id == "stops-01").unwrap();
    let tasks_path = tmp.path().join("one.json");
    let raw: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(common::seed_tasks_path()).unwrap()).unwrap();
    let one: Vec<&Value> = raw.iter().filter(|t| t["task_id"] == "stops-01").collect();
    std::fs::write(&tasks_path, serde_json::to_string(&one).unwrap()).unwrap();

    let script = StubScript::new(vec![
        StubEntry::role(RoleTag::Moderation, "ALLOWED", (200, 1)),
        StubEntry::role(RoleTag::Main, format!("```python\n{}```", task.gold_code), (7000, 180)),
        StubEntry::role(RoleTag::Summary, "Found 3 stops at Illinois Terminal.", (600, 12)),
    ]);
    let script_path = tmp.path().join("script.json");
    std::fs::write(&script_path, serde_json::to_string(&script).unwrap()).unwrap();

    let out = tmp.path().join("r.json");
    ok(bin(&[
        "bench", "run", "--tasks", tasks_path.to_str().unwrap(), "--mode", "baseline",
        "--model", &format!("stub:{}", script_path.display()), "--feeds-dir", tmp.path().to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--mock-executor",
    ]));
    let report = read_report(&out).unwrap();
    assert_eq!(report.config, "baseline");
    let r = &report.results[0];
    assert_eq!(r.score, Score::Pass);
    assert_eq!(r.tokens, 200 + 1 + 7000 + 180 + 600 + 12);
    assert_eq!(report.transcripts[&r.transcript_ref].answer, Some(Value::from("Found 3 stops")));
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["prepare-feed", "--in", tmp.path().to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stops"));

    let out = bin(&["bench", "report", "--in", tmp.path().join("missing.json").to_str().unwrap()]);
    assert!(!out.status.success());

    prepare(tmp.path());
    let out = bin(&[
        "bench", "run", "--tasks", common::seed_tasks_path().to_str().unwrap(), "--model", "gpt-4o",
        "--feeds-dir", tmp.path().to_str().unwrap(), "--out", tmp.path().join("r.json").to_str().unwrap(),
    ]);
    if std::env::var_os("LLM_API_KEY_OPENAI").is_none() {
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("LLM_API_KEY_OPENAI"));
    }
}

#[test]
fn sample_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/transit-ask.toml");
    let config = transit_ask::config::ServiceConfig::load(&path).unwrap();
    assert_eq!(config.run, transit_ask_core::pipeline::RunConfig::default());
    assert_eq!(config.models.len(), 2);
}

/// Re-runs every gold snippet under pandas when a Python with pandas is
/// available and checks the stored outputs are current.
#[test]
fn gold_outputs_are_current() {
    let probe = Command::new("python3").args(["-c", "import pandas"]).output();
    if !probe.is_ok_and(|o| o.status.success()) {
        eprintln!("skipped: python3 with pandas not available");
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = Command::new("python3")
        .arg(root.join("tools/gold_outputs.py"))
        .arg(common::fixture_dir())
        .arg(common::seed_tasks_path())
        .arg("--check")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}
