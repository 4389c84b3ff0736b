use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn admin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brewtask-admin"))
        .arg("--data-dir")
        .arg(dir.join("data"))
        .arg("--feed-fixture")
        .arg(fixture("feed.json"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn write_seed(dir: &Path, codes: &[&str]) {
    let mut csv = String::from("code\n");
    for c in codes {
        csv.push_str(c);
        csv.push('\n');
    }
    std::fs::write(dir.join("codes.csv"), csv).unwrap();
    std::fs::write(
        dir.join("seed.toml"),
        r#"
[[users]]
id = "req"
role = "requestor"
api_key = "req-key"

[[users]]
id = "w1"
role = "worker"
api_key = "w1-key"

[[rewards]]
id = "coffee"
title = "Coffee at the faculty bar"
price_cents = 60
venue = "Faculty bar"
codes_file = "codes.csv"
"#,
    )
    .unwrap();
}

fn write_job(dir: &Path, rows: usize, publish: bool) -> PathBuf {
    let mut csv = String::from("text\n");
    for i in 0..rows {
        csv.push_str(&format!("sentence number {i}\n"));
    }
    std::fs::write(dir.join("sentences.csv"), csv).unwrap();
    let job = serde_json::json!({
        "owner": "req",
        "title": "Relation check",
        "instructions": "Does the sentence express the relation?",
        "category": "espresso",
        "batch_size": 3,
        "reward": {"cents": 3, "currency": "EUR"},
        "ui_template_ref": "<p>{{text}}</p>",
        "fields": [{"name": "relation", "kind": "text", "options": ["yes", "no"]}],
        "data": {"source": "csv", "path": "sentences.csv"},
        "publish": publish
    });
    let path = dir.join(format!("job-{rows}-{publish}.json"));
    std::fs::write(&path, job.to_string()).unwrap();
    path
}

#[test]
fn seed_loads_codes_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    let codes: Vec<String> = (0..84).map(|i| format!("CAFE-{i:03}")).collect();
    write_seed(dir.path(), &codes.iter().map(String::as_str).collect::<Vec<_>>());

    let first = json(&admin(dir.path(), &["seed", "seed.toml"]));
    assert_eq!(first["users_created"], 2);
    assert_eq!(first["rewards"][0]["codes_added"], 84);
    assert_eq!(first["rewards"][0]["remaining"], 84);

    let again = json(&admin(dir.path(), &["seed", "seed.toml"]));
    assert_eq!(again["users_created"], 0);
    assert_eq!(again["users_updated"], 2);
    assert_eq!(again["rewards"][0]["codes_added"], 0);
    assert_eq!(again["rewards"][0]["remaining"], 84);
}

#[test]
fn duplicate_code_rejected_with_line() {
    let dir = tempfile::tempdir().unwrap();
    write_seed(dir.path(), &["A-1", "A-2", "A-1"]);
    let out = admin(dir.path(), &["seed", "seed.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("codes.csv:4") && err.contains("A-1"), "{err}");

    // nothing was written
    write_seed(dir.path(), &["A-1"]);
    let seeded = json(&admin(dir.path(), &["seed", "seed.toml"]));
    assert_eq!(seeded["rewards"][0]["created"], true);
}

#[test]
fn bad_seed_syntax_names_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("seed.toml"), "[[users]]\nid = \"x\"\nrole = worker\n").unwrap();
    let out = admin(dir.path(), &["seed", "seed.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed.toml:3:"), "{err}");
}

#[test]
fn load_simulate_export() {
    let dir = tempfile::tempdir().unwrap();
    write_seed(dir.path(), &["A"]);
    ok(&admin(dir.path(), &["seed", "seed.toml"]));

    let out = admin(dir.path(), &["simulate", "--workers", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no published jobs"));

    let job = write_job(dir.path(), 12, true);
    let loaded = json(&admin(dir.path(), &["job", "load", job.to_str().unwrap()]));
    assert_eq!(loaded["units"], 12);
    assert_eq!(loaded["instances"], 4);
    assert_eq!(loaded["status"], "published");
    let job_id = loaded["job_id"].as_str().unwrap().to_owned();

    let report = json(&admin(
        dir.path(),
        &["simulate", "--workers", "3", "--accuracy", "1.0", "--seed", "9"],
    ));
    assert_eq!(report["units_finalized"], 12);
    assert_eq!(report["judgments"], 36);
    assert_eq!(report["total_payout_cents"], 36);
    assert_eq!(report["ledger_conserved"], true);

    let kappa = ok(&admin(dir.path(), &["export", "kappa", "--job", &job_id, "--format", "text"]));
    let row = kappa.lines().find(|l| l.starts_with("relation")).unwrap();
    assert!(row.split_whitespace().any(|c| c == "1.0000"), "{kappa}");

    let csv_path = dir.path().join("results.csv");
    ok(&admin(
        dir.path(),
        &["export", "results", "--job", &job_id, "--format", "csv", "--out", csv_path.to_str().unwrap()],
    ));
    let csv = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(csv.lines().count(), 12 + 1);

    let stats = json(&admin(dir.path(), &["export", "stats", "--job", &job_id]));
    assert_eq!(stats["judgments"], 36);
    assert_eq!(stats["instance_durations"]["count"], 12);
    let text = ok(&admin(dir.path(), &["export", "stats", "--job", &job_id, "--format", "text"]));
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["judgments", "36"]), "{text}");
}

#[test]
fn export_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    write_seed(dir.path(), &["A"]);
    ok(&admin(dir.path(), &["seed", "seed.toml"]));
    let job = write_job(dir.path(), 3, false);
    let loaded = json(&admin(dir.path(), &["job", "load", job.to_str().unwrap()]));
    let job_id = loaded["job_id"].as_str().unwrap();
    assert_eq!(loaded["status"], "draft");

    let stats = json(&admin(dir.path(), &["export", "stats", "--job", job_id]));
    assert_eq!(stats["judgments"], 0);
    assert_eq!(stats["instance_durations"]["count"], 0);

    let out = admin(dir.path(), &["export", "stats", "--job", "job-0404"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown job job-0404"));

    let out = admin(dir.path(), &["export", "kappa", "--job", job_id, "--format", "csv"]);
    assert!(!out.status.success());

    assert_eq!(ok(&admin(dir.path(), &["expire"])).trim(), "expired 0");
}
