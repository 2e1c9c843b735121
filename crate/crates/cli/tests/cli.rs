use std::process::{Command, Output};

use evmsopt_cli::{collect_jobs, looks_like_hex, parse_input, InputFormat};
use evmsopt_core::bytecode::{disassemble, parse_hex};
use evmsopt_core::isa::static_gas;
use serde_json::Value;

const NEG_ADD: &str = "0x600003600301";
const STORAGE_BLOCK: &str = "PUSH 0 PUSH 4 SLOAD SUB PUSH 4 DUP2 SWAP1 SSTORE POP";

fn evmsopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evmsopt"))
        .args(["--timeout", "300"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// Gas savings recomputed from the hex fields.
fn recomputed_saving(report: &Value) -> (i64, i64) {
    let gas = |field: &str| {
        let bytes = parse_hex(report[field].as_str().unwrap()).unwrap();
        let program = disassemble(&bytes);
        let block = program
            .blocks()
            .next()
            .map(|(_, b)| b.clone())
            .unwrap_or_else(evmsopt_core::Block::empty);
        let (lo, hi) = static_gas(&block).unwrap();
        (lo as i64, hi as i64)
    };
    let (s, t) = (gas("source_hex"), gas("target_hex"));
    (s.0 - t.0, s.1 - t.1)
}

fn check_summary(doc: &Value) {
    let s = &doc["summary"];
    let statuses = [
        "optimized",
        "optimized_optimal",
        "already_optimal",
        "timeout",
        "translation_validation_failed",
        "unsupported",
        "solver_error",
    ];
    let total: u64 = statuses.iter().map(|k| s[k].as_u64().unwrap()).sum();
    assert_eq!(total, s["blocks"].as_u64().unwrap());
    assert_eq!(
        s["blocks"].as_u64().unwrap() as usize,
        doc["reports"].as_array().unwrap().len()
    );
    for k in statuses {
        let n = doc["reports"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["status"] == k)
            .count();
        assert_eq!(s[k].as_u64().unwrap() as usize, n, "{k}");
    }
}

#[test]
fn neg_add_unbounded() {
    let out = evmsopt(&["--mode", "unbounded", "--output", "json", NEG_ADD]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_eq!(doc["version"], 1);
    let r = &doc["reports"][0];
    assert_eq!(r["source_asm"], "PUSH 0 SUB PUSH 3 ADD");
    assert_eq!(r["target_asm"], "PUSH 3 SUB");
    assert_eq!(r["target_hex"], "0x600303");
    assert_eq!(r["status"], "optimized_optimal");
    assert_eq!(
        (r["gas_saved_min"].as_i64(), r["gas_saved_max"].as_i64()),
        (Some(6), Some(6))
    );
    assert_eq!(recomputed_saving(r), (6, 6));
    check_summary(&doc);
}

#[test]
fn already_optimal_keeps_source() {
    let out = evmsopt(&["--mode", "basic", "--output", "json", "PUSH 3 SUB"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    let r = &doc["reports"][0];
    assert_eq!(r["status"], "already_optimal");
    assert_eq!(r["target_hex"], r["source_hex"]);
    assert_eq!(r["gas_saved_min"], 0);
    assert_eq!(r["gas_saved_max"], 0);
}

#[test]
fn storage_block_report() {
    let out = evmsopt(&["--mode", "unbounded", "--output", "json", STORAGE_BLOCK]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    let r = &doc["reports"][0];
    assert_eq!(r["target_asm"], "");
    assert_eq!(r["gas_saved_min"], 5220);
    assert_eq!(r["gas_saved_max"], 20220);
    assert_eq!(recomputed_saving(r), (5220, 20220));
}

#[test]
fn empty_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.hex");
    std::fs::write(&path, "").unwrap();
    let out = evmsopt(&["--output", "json", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_eq!(doc["summary"]["blocks"], 0);
    assert!(doc["reports"].as_array().unwrap().is_empty());
}

#[test]
fn duplicate_contracts_are_optimized_once() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.hex");
    let b = dir.path().join("b.hex");
    // PUSH 0 SUB PUSH 3 ADD, JUMPDEST, DUP1 POP
    std::fs::write(&a, "6000036003015b8050").unwrap();
    std::fs::write(&b, "6000036003015b8050").unwrap();
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());

    let doc = json(&evmsopt(&["--mode", "basic", "--output", "json", a, b]));
    let reports = doc["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r["occurrences"] == 2));
    check_summary(&doc);

    let doc = json(&evmsopt(&[
        "--mode", "basic", "--dedup", "false", "--output", "json", a, b,
    ]));
    assert_eq!(doc["reports"].as_array().unwrap().len(), 4);
    check_summary(&doc);
}

#[test]
fn dedup_ignores_wide_constants() {
    let inputs = [
        parse_input("a", "PUSH 1000 ADD", InputFormat::Asm).unwrap(),
        parse_input("b", "PUSH 2000 ADD", InputFormat::Asm).unwrap(),
        parse_input("c", "PUSH 3 ADD", InputFormat::Asm).unwrap(),
    ];
    assert_eq!(collect_jobs(&inputs, true).len(), 2);
    assert_eq!(collect_jobs(&inputs, false).len(), 3);
}

#[test]
fn input_detection() {
    assert!(looks_like_hex("0x600003600301"));
    assert!(looks_like_hex("600003600301\n"));
    assert!(looks_like_hex(""));
    assert!(!looks_like_hex("PUSH 0 SUB"));
    assert!(!looks_like_hex("ADD"));
    assert!(!looks_like_hex("ADD 5"));
    assert!(!looks_like_hex("60 0"));
}

#[test]
fn bad_input_exits_2() {
    assert_eq!(evmsopt(&["0xzz"]).status.code(), Some(2));
    assert_eq!(evmsopt(&["ADD 5"]).status.code(), Some(2));
    assert_eq!(evmsopt(&["--no-such-flag", "ADD"]).status.code(), Some(2));
    assert_eq!(evmsopt(&["--width", "5", "ADD"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_1() {
    let out = evmsopt(&[
        "--solver",
        "/nonexistent/solver",
        "--output",
        "json",
        "ADDRESS DUP1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let doc = json(&out);
    assert_eq!(doc["reports"][0]["status"], "solver_error");
    assert_eq!(doc["summary"]["solver_error"], 1);
}

#[test]
fn patched_output() {
    // PUSH 0 SUB PUSH 3 ADD followed by STOP
    let out = evmsopt(&[
        "--mode",
        "basic",
        "--emit-patched",
        "--output",
        "json",
        "0x60000360030100",
    ]);
    let doc = json(&out);
    assert_eq!(doc["patched"][0]["hex"], "0x60030300");
    assert!(doc["patched"][0].get("warning").is_none());

    // the same block ahead of a JUMP keeps its bytes
    let out = evmsopt(&[
        "--mode",
        "basic",
        "--emit-patched",
        "--output",
        "json",
        "0x60000360030156",
    ]);
    let doc = json(&out);
    assert_eq!(doc["patched"][0]["hex"], "0x60000360030156");
    assert!(doc["patched"][0]["warning"].is_string());
}

#[test]
fn exported_scripts_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let export = dir.path().join("smt");
    let out = evmsopt(&[
        "--mode",
        "basic",
        "--export-smt-dir",
        export.to_str().unwrap(),
        "ADDRESS DUP1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut files: Vec<_> = std::fs::read_dir(&export)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty());
    for f in files {
        let rerun = Command::new("z3").arg("-smt2").arg(&f).output().unwrap();
        let verdict = String::from_utf8_lossy(&rerun.stdout);
        let first = verdict.lines().next().unwrap_or("");
        assert!(
            first == "sat" || first == "unsat",
            "{}: {verdict}",
            f.display()
        );
    }
}

#[test]
fn report_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = evmsopt(&[
        "--mode",
        "basic",
        "--output",
        "json",
        "--out",
        path.to_str().unwrap(),
        "DUP1 POP",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(doc["reports"][0]["target_asm"], "");
}

#[test]
fn stdin_input() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_evmsopt"))
        .args(["--mode", "basic", "--output", "json"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"PUSH 0 ADD\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_eq!(doc["reports"][0]["target_asm"], "");
    assert_eq!(doc["reports"][0]["input"], "<stdin>");
}
