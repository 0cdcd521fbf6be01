//! End-to-end runs of the `govloop` binary.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use govloop_core::{flowr, AuditLog, Durability, GovernanceService, ReferenceDeliberator, SystemClock};
use serde_json::{json, Value};

fn govloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_govloop")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn repo_file(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).display().to_string()
}

#[test]
fn validate_reports_each_failure_class() {
    let ok = govloop(&["validate", &repo_file("rules/flowr.json")]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).starts_with("ok: 7 rules"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"version":1,"rules":[{"id":"S9","layer":"SITUATIONAL","text":"pause during audits"}]}"#,
    )
    .unwrap();
    let out = govloop(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("SCHEMA_ERROR") && stdout(&out).contains("S9"), "{}", stdout(&out));

    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, "{ rules: nope").unwrap();
    let out = govloop(&["validate", garbled.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PARSE_ERROR"));
}

#[test]
fn scenario_report_is_reproducible_under_a_fixed_clock() {
    let a = govloop(&["scenarios", "run", "--json", "--fixed-clock"]);
    let b = govloop(&["scenarios", "run", "--json", "--fixed-clock"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!((report["correct"].as_u64(), report["runs"].as_u64()), (Some(40), Some(40)));
    assert_eq!(report["escalation_precision"], 1.0);
}

#[test]
fn a_wrong_expectation_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec: Value = serde_json::from_slice(flowr::SCENARIO_SOURCES[0]).unwrap();
    spec["expected"]["path"] = json!(["ESCALATE"]);
    let path = dir.path().join("s1.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    let out = govloop(&["scenarios", "run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("0/10"));
}

fn write_log(dir: &Path) -> PathBuf {
    let path = dir.join("traces.jsonl");
    let clock = Arc::new(SystemClock);
    let audit = Arc::new(AuditLog::open(&path, Durability::Flush, clock.clone()).unwrap());
    let svc = GovernanceService::new(
        flowr::ruleset(),
        flowr::context_seed(),
        Arc::new(ReferenceDeliberator::new()),
        audit,
        clock,
        Default::default(),
    );
    for intent in [flowr::s1_intent(), flowr::s2_intent(45000.0), flowr::s3_intent()] {
        svc.evaluate(&intent).unwrap();
    }
    path
}

#[test]
fn traces_query_and_verify_read_a_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_log(dir.path());
    let log_arg = log.to_str().unwrap();

    let out = govloop(&["traces", "verify", "--log", log_arg]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("OK: 5 records"), "{}", stdout(&out));

    let out = govloop(&["traces", "query", "--log", log_arg, "--decision", "escalate"]);
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["body"]["rules_cited"], json!(["R1", "R3"]));

    let mut text: Vec<String> = std::fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    assert!(text[3].contains("R4"));
    text[3] = text[3].replacen("R4", "R9", 1);
    std::fs::write(&log, text.join("\n") + "\n").unwrap();
    let out = govloop(&["traces", "verify", "--log", log_arg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).starts_with("MISMATCH at index 3"), "{}", stdout(&out));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_then_manage_escalations_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let config = dir.path().join("govloop.toml");
    std::fs::write(
        &config,
        format!(
            "listen = \"127.0.0.1:{port}\"\nrules = \"{}\"\ncontext = \"{}\"\nlog = \"traces.jsonl\"\n",
            repo_file("rules/flowr.json"),
            repo_file("context/flowr.json"),
        ),
    )
    .unwrap();
    let _server = Server(
        Command::new(env!("CARGO_BIN_EXE_govloop"))
            .args(["serve", "--config", config.to_str().unwrap()])
            .env("GOVLOOP_OPERATOR_TOKENS", "ops:op-token")
            .env("GOVLOOP_AGENT_TOKENS", "flowr:agent-token")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let base = format!("http://127.0.0.1:{port}");
    let http = reqwest::blocking::Client::new();
    let deadline = Instant::now() + Duration::from_secs(20);
    while http.get(format!("{base}/health")).send().is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }

    let eval: Value = http
        .post(format!("{base}/v1/intents/evaluate"))
        .bearer_auth("agent-token")
        .json(&flowr::s2_intent(45000.0))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let esc = eval["escalation_id"].as_str().unwrap().to_string();

    let cli = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_govloop"))
            .args(args)
            .env("GOVLOOP_TOKEN", "op-token")
            .output()
            .unwrap()
    };
    let out = cli(&["escalations", "list", "--server", &base, "--status", "pending"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains(&esc) && stdout(&out).contains("PENDING"), "{}", stdout(&out));

    let out = cli(&["escalations", "resolve", "--server", &base, &esc, "--approve", "--note", "ok"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("APPROVED") && text.contains("token R1 apr:R1:") && text.contains("token R3 apr:R3:"), "{text}");

    let out = cli(&["escalations", "resolve", "--server", &base, &esc, "--deny"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ALREADY_RESOLVED"));

    let out = cli(&["traces", "verify", "--server", &base]);
    assert!(stdout(&out).starts_with("OK:"), "{}", stdout(&out));
    let out = cli(&["traces", "query", "--server", &base, "--kind", "escalation_resolved"]);
    assert_eq!(stdout(&out).lines().count(), 1);
    // The file log the server writes verifies offline too.
    let out = cli(&["traces", "verify", "--log", dir.path().join("traces.jsonl").to_str().unwrap()]);
    assert!(stdout(&out).starts_with("OK: 3 records"), "{}", stdout(&out));
}
