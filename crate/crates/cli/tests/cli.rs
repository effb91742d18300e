use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn radsafe(dir: &Path, args: &[&str]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_radsafe"));
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("RADSAFE_")) {
        cmd.env_remove(k);
    }
    let out = cmd.output().expect("run radsafe");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let r = radsafe(dir, args);
    assert_eq!(r.code, 0, "radsafe {args:?}\nstdout: {}\nstderr: {}", r.stdout, r.stderr);
    r.stdout
}

fn json(dir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    serde_json::from_str(&ok(dir, &full)).expect("json output")
}

const T0: &str = "2024-01-01T00:00:00Z";

/// A CA, a CENTRAL facility identity, one operator and a node config.
fn site() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["ca", "init", "--dir", "ca", "--not-before", T0]);
    ok(p, &["cert", "issue", "--ca", "ca", "--name", "CENTRAL", "--role", "facility", "--out", "central.json", "--not-before", T0]);
    ok(p, &["cert", "issue", "--ca", "ca", "--name", "dr-a", "--role", "professional", "--out", "dr-a.json", "--not-before", T0]);
    std::fs::write(
        p.join("central.toml"),
        "listen = \"127.0.0.1:0\"\ndata_dir = \"data\"\nrole = \"CENTRAL\"\nnode_id = \"CENTRAL\"\n\
         trust_bundle = \"ca/bundle.json\"\nidentity = \"central.json\"\n",
    )
    .unwrap();
    d
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("RADSAFE_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

#[test]
fn record_chest_radiograph_prints_dose_and_id() {
    let site = site();
    let out = ok(
        site.path(),
        &["record", "--config", "central.toml", "--patient", "P-1", "--exam", "chest_pa", "--dap", "197", "--area", "1225", "--tissue", "lung"],
    );
    assert!(out.contains("effective dose 0.0193 mSv"), "{out}");
    let id = out.lines().next().unwrap().split_whitespace().nth(1).unwrap();
    assert_eq!(id.len(), 36, "{out}");
}

#[test]
fn empty_patient_profile_has_zero_totals() {
    let site = site();
    let v = json(site.path(), &["profile", "--config", "central.toml", "NOBODY"]);
    let p = &v["profile"];
    assert_eq!(p["cumulative_total_msv"], 0.0);
    assert_eq!(p["chest_equivalents"], 0.0);
    assert!(p["records"].as_array().unwrap().is_empty());
    for (_, w) in p["window_sums"].as_object().unwrap() {
        assert_eq!(w.as_f64().unwrap().to_bits(), 0f64.to_bits(), "{w}");
    }
}

#[test]
fn exit_codes_by_error_class() {
    let site = site();
    let p = site.path();
    assert_eq!(radsafe(p, &["profile", "--config", "missing.toml", "X"]).code, 2);
    assert_eq!(radsafe(p, &["record", "--bogus-flag"]).code, 2);
    assert_eq!(radsafe(p, &["profile", "X"]).code, 2);

    let neg = radsafe(p, &["record", "--config", "central.toml", "--patient", "P", "--exam", "head", "--dlp", "-1", "--anatomy", "head"]);
    assert_eq!((neg.code, neg.stderr.contains("INVALID_DOSE_INPUT")), (6, true), "{}", neg.stderr);
    assert_eq!(radsafe(p, &["report", "--config", "central.toml", "--from", "2025-02-01", "--to", "2025-01-01"]).code, 6);

    let id = ["--record-id", "11111111-1111-4111-8111-111111111111", "--at", "2025-01-01T00:00:00Z"];
    let base = ["record", "--config", "central.toml", "--patient", "P", "--exam", "head", "--anatomy", "head"];
    let first: Vec<&str> = base.iter().chain(&id).chain(&["--dlp", "1000"]).copied().collect();
    ok(p, &first);
    let dup = ok(p, &first);
    assert!(dup.contains("(duplicate)"), "{dup}");
    let other: Vec<&str> = base.iter().chain(&id).chain(&["--dlp", "1001"]).copied().collect();
    assert_eq!(radsafe(p, &other).code, 3);

    ok(p, &["card", "personalize", "--ca", "ca", "--kind", "professional", "--holder", "dr-b", "--pin", "2468", "--out", "drb.card"]);
    let wrong: Vec<&str> = base.iter().chain(&["--dlp", "10", "--prsc", "drb.card", "--pin", "0000"]).copied().collect();
    let r = radsafe(p, &wrong);
    assert_eq!((r.code, r.stderr.contains("WRONG_PIN")), (3, true), "{}", r.stderr);

    let unreachable = radsafe(p, &["profile", "--server", "http://127.0.0.1:9", "--identity", "dr-a.json", "X"]);
    assert_eq!(unreachable.code, 5, "{}", unreachable.stderr);

    // a flipped byte in the stored log fails re-verification on open
    let log = p.join("data/envelopes.log");
    let mut bytes = std::fs::read(&log).unwrap();
    let at = bytes.iter().position(|&b| b == b'"').unwrap() + 40;
    bytes[at] = if bytes[at] == b'A' { b'B' } else { b'A' };
    std::fs::write(&log, bytes).unwrap();
    let r = radsafe(p, &["profile", "--config", "central.toml", "P"]);
    assert_eq!(r.code, 4, "{}", r.stderr);
}

#[test]
fn json_errors_carry_the_code() {
    let site = site();
    let r = radsafe(site.path(), &["--json", "profile", "--config", "missing.toml", "X"]);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!((v["error"].as_str(), v["exit_code"].as_u64()), (Some("CONFIG"), Some(2)));
}

#[test]
fn scenario_replay_matches_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let names = json(dir.path(), &["scenario", "list"]);
    assert_eq!(names, serde_json::json!(["no-card-online", "no-card-offline", "card-only"]));
    for name in ["no-card-online", "no-card-offline", "card-only"] {
        let text = ok(dir.path(), &["scenario", "replay", "--case", name]);
        let core = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../core/tests/golden/{name}.txt"));
        assert_eq!(text, std::fs::read_to_string(core).unwrap(), "{name}");
        let machine = ok(dir.path(), &["--json", "scenario", "replay", "--case", name]);
        check_golden(&format!("scenario-{name}.json"), &machine);
    }
    assert_eq!(radsafe(dir.path(), &["scenario", "replay", "--case", "nope"]).code, 2);
}

#[test]
fn machine_profile_output_is_stable() {
    let site = site();
    let p = site.path();
    let rows = [
        ("a1b2c3d4-0000-4000-8000-000000000001", "2025-01-10T09:00:00Z", "head", "--dlp", "1000"),
        ("a1b2c3d4-0000-4000-8000-000000000002", "2025-02-03T10:30:00Z", "abdomen", "--catalog", "abdomen"),
        ("a1b2c3d4-0000-4000-8000-000000000003", "2025-03-01T11:00:00Z", "chest_pa", "--dap", "197"),
    ];
    for (id, at, exam, flag, value) in rows {
        let mut args = vec!["record", "--config", "central.toml", "--patient", "P-001", "--age", "45", "--facility", "HOSP-A"];
        args.extend(["--record-id", id, "--at", at, "--exam", exam, flag, value]);
        match flag {
            "--dlp" => args.extend(["--anatomy", "head"]),
            "--dap" => args.extend(["--area", "1225", "--tissue", "lung"]),
            _ => {}
        }
        ok(p, &args);
    }
    let out = ok(p, &["--json", "profile", "--config", "central.toml", "P-001", "--as-of", "2025-06-01T00:00:00Z"]);
    check_golden("profile-P-001.json", &out);
    let whatif = ok(p, &["--json", "whatif", "--config", "central.toml", "P-001", "--exam", "abdomen", "--as-of", "2025-06-01T00:00:00Z"]);
    check_golden("whatif-P-001-abdomen.json", &whatif);
}

#[test]
fn card_only_recording_then_card_sync_into_a_store() {
    let site = site();
    let p = site.path();
    ok(p, &["card", "personalize", "--ca", "ca", "--kind", "citizen", "--holder", "P-9", "--pin", "1357", "--capacity", "2", "--out", "p9.card", "--not-before", T0]);
    ok(p, &["card", "personalize", "--ca", "ca", "--kind", "professional", "--holder", "dr-c", "--pin", "2468", "--out", "drc.card", "--not-before", T0]);
    let rec = |n: &str, at: &str| {
        ok(
            p,
            &[
                "record", "--card", "p9.card", "--trust", "ca/bundle.json", "--prsc", "drc.card", "--pin", "2468", "--patient", "P-9",
                "--facility", "LAB-M", "--exam", "head", "--dlp", n, "--anatomy", "head", "--at", at,
            ],
        )
    };
    let out = rec("500", "2025-01-01T08:00:00Z");
    assert!(out.contains("stored in CARD:P-9"), "{out}");
    rec("1500", "2025-01-02T08:00:00Z");

    // the card is full of records nobody has confirmed; a third waits
    let third = rec("250", "2025-01-03T08:00:00Z");
    assert!(third.contains("stored in -"), "{third}");
    let card = json(p, &["card", "read", "--card", "p9.card", "--trust", "ca/bundle.json"]);
    assert_eq!(card["records"].as_array().unwrap().len(), 2);
    assert!(card["records"].as_array().unwrap().iter().all(|r| r["verified"] == "OK"));

    let sync = json(p, &["sync", "card", "--config", "central.toml", "--card", "p9.card"]);
    assert_eq!(sync["to_store"]["inserted"], 2);
    assert_eq!(sync["marked_durable"], 2);
    let prof = json(p, &["profile", "--config", "central.toml", "P-9"]);
    assert_eq!(prof["profile"]["cumulative_total_msv"], 4.0);
    let from_card = json(p, &["profile", "--card", "p9.card", "--trust", "ca/bundle.json", "P-9"]);
    assert_eq!(from_card["profile"]["cumulative_total_msv"], 4.0);
}
