use std::path::Path;
use std::process::{Command, Output};

use hookwatch_core::chain::MockRpcServer;
use hookwatch_corpus::sets::{all_sets, build, SetKind};
use serde_json::Value;

fn hookwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hookwatch")).args(args).env_remove("ETH_RPC_URL").output().expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("json output")
}

fn untimed(mut v: Value) -> Value {
    v["timing"] = Value::Null;
    v
}

fn write_bounce(dir: &Path) -> (String, String) {
    let set = build(SetKind::Bounce, true);
    let fixtures = dir.join("bounce");
    set.store.write(&fixtures).unwrap();
    let hex = dir.join("bounce_from.hex");
    std::fs::write(&hex, format!("0x{}\n", hex::encode(set.entry_code()))).unwrap();
    (hex.display().to_string(), fixtures.display().to_string())
}

#[test]
fn bounce_hex_file_is_one_user_defined_finding() {
    let dir = tempfile::tempdir().unwrap();
    let (hex, fixtures) = write_bounce(dir.path());
    let out = hookwatch(&["analyze", "--hex-file", &hex, "--fixtures", &fixtures]);
    assert_eq!(out.status.code(), Some(2));
    let r = json(&out.stdout);
    let findings = r["findings"].as_array().unwrap();
    assert_eq!(findings.len(), 1);
    assert_eq!(findings[0]["attack_type"], "user-defined");
}

#[test]
fn stop_only_contract_is_benign() {
    let out = hookwatch(&["analyze", "--hex", "0x00"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out.stdout)["findings"], Value::Array(vec![]));
}

#[test]
fn operational_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.hex");
    std::fs::write(&bad, "0xzz").unwrap();
    for args in [
        vec!["analyze", "--hex-file", bad.to_str().unwrap()],
        vec!["analyze", "--hex-file", "/nonexistent/x.hex"],
        vec!["analyze", "--address", "0x1111111111111111111111111111111111111111", "--rpc", "http://127.0.0.1:9"],
        vec!["analyze", "--address", "0x1111111111111111111111111111111111111111"],
        vec!["analyze", "--address", "0x11"],
    ] {
        let out = hookwatch(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    let out = hookwatch(&["analyze", "--hex-file", bad.to_str().unwrap()]);
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "parse");
}

#[test]
fn report_file_written_for_any_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = hookwatch(&["analyze", "--hex", "0x00", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&std::fs::read(&path).unwrap())["verdict"], "benign");
}

fn corpus_dir(dir: &Path) -> Vec<String> {
    let mut merged = hookwatch_core::FixtureStore::new();
    let mut lines = Vec::new();
    for set in all_sets().into_iter().take(12) {
        merged.merge(&set.store);
        lines.push(set.entry.to_string());
    }
    merged.write(&dir.join("all")).unwrap();
    lines
}

#[test]
fn batch_summary_matches_reports() {
    let dir = tempfile::tempdir().unwrap();
    let lines = corpus_dir(dir.path());
    let list = dir.path().join("list.txt");
    std::fs::write(&list, lines.join("\n")).unwrap();
    let out_dir = dir.path().join("out");
    let fixtures = dir.path().join("all");
    let out = hookwatch(&[
        "batch",
        list.to_str().unwrap(),
        "--fixtures",
        fixtures.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let summary = json(&std::fs::read(out_dir.join("summary.json")).unwrap());
    assert_eq!(summary["total"], 12);
    let (mut attacker, mut benign) = (0, 0);
    for i in 0..12 {
        let r = json(&std::fs::read(out_dir.join(format!("{i}.json"))).unwrap());
        match r["verdict"].as_str().unwrap() {
            "attacker" => attacker += 1,
            _ => benign += 1,
        }
        assert_eq!(summary["items"][i]["verdict"], r["verdict"]);
    }
    assert_eq!(summary["attacker"], attacker);
    assert_eq!(summary["benign"], benign);
}

#[test]
fn empty_batch_is_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("empty.txt");
    std::fs::write(&list, "").unwrap();
    let out = hookwatch(&["batch", list.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let s = json(&out.stdout);
    assert_eq!(s["total"], 0);
    assert_eq!(s["items"], Value::Array(vec![]));
}

#[test]
fn malformed_entry_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = corpus_dir(dir.path());
    lines[4] = "0xnothex".into();
    let list = dir.path().join("list.txt");
    std::fs::write(&list, lines.join("\n")).unwrap();
    let fixtures = dir.path().join("all");
    let out = hookwatch(&["batch", list.to_str().unwrap(), "--fixtures", fixtures.to_str().unwrap()]);
    let s = json(&out.stdout);
    assert_eq!(s["errored"], 1);
    assert_eq!(s["attacker"].as_u64().unwrap() + s["benign"].as_u64().unwrap(), 11);
    assert!(s["items"][4]["error"].is_string());
}

#[test]
fn recorded_rpc_run_replays_identically() {
    let set = build(SetKind::Visor, true);
    let server = MockRpcServer::start(set.store.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec");
    let addr = set.entry.to_string();
    let live = hookwatch(&["analyze", "--address", &addr, "--rpc", &server.url(), "--record", rec.to_str().unwrap()]);
    assert_eq!(live.status.code(), Some(2));

    let hex = dir.path().join("entry.hex");
    let code = std::fs::read_to_string(rec.join(format!("{addr}.hex"))).unwrap();
    std::fs::write(&hex, code).unwrap();
    let replay = hookwatch(&["analyze", "--hex-file", hex.to_str().unwrap(), "--fixtures", rec.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(2));
    assert_eq!(untimed(json(&live.stdout)), untimed(json(&replay.stdout)));
}

#[test]
fn rpc_url_from_environment() {
    let set = build(SetKind::NoCalls, true);
    let server = MockRpcServer::start(set.store.clone()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hookwatch"))
        .args(["analyze", "--address", &set.entry.to_string()])
        .env("ETH_RPC_URL", server.url())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(server.requests() > 0);
}
