use std::path::Path;
use std::process::{Command, Output};

use bsa_relay::sim::{read_csv, read_json, Scheme, CSV_HEADER, JSON_SCHEMA_ID};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bsa-relay"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn sweep_args<'a>(cmd: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![cmd, "--snr-start", "10", "--snr-stop", "20", "--snr-step", "5", "--trials", "8", "--seed", "3", "--out", out]
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn outage_writes_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let o = run(&sweep_args("outage", path_str(&out)));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let result = read_csv(&out).unwrap();
    // 5 schemes × 3 SNR points × 2 users
    assert_eq!(result.rows.len(), 30);
    assert!(result.rows.iter().all(|r| r.trials == 8 && r.seed == 3 && (0.0..=1.0).contains(&r.outage_prob)));
}

#[test]
fn capacity_json_follows_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let mut args = sweep_args("capacity", path_str(&out));
    args.extend(["--format", "json", "--schemes", "bsa-alg2,time-sharing"]);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(value["schema"], JSON_SCHEMA_ID);
    let rows = value["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    let keys = [
        "scheme",
        "snr_db",
        "user",
        "outage_prob",
        "outage_stderr",
        "mean_mi_bits",
        "ergodic_capacity_bits",
        "trials",
        "seed",
    ];
    for row in rows {
        let obj = row.as_object().unwrap();
        assert_eq!(obj.len(), keys.len());
        for k in keys {
            assert!(obj.contains_key(k), "missing {k}");
        }
        assert!(row["ergodic_capacity_bits"].as_f64().unwrap() > 0.0);
    }
    let parsed = read_json(&out).unwrap();
    assert!(parsed.rows.iter().all(|r| matches!(r.scheme, Scheme::BsaAlg2 | Scheme::TimeSharing)));
}

#[test]
fn worker_override_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("w{workers}.csv"));
        let o = bin().env("BSA_RELAY_WORKERS", workers).args(sweep_args("outage", path_str(&out))).output().unwrap();
        assert!(o.status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    let out = dir.path().join("flag.csv");
    let mut args = vec!["--workers", "2"];
    args.extend(sweep_args("outage", path_str(&out)));
    assert!(run(&args).status.success());
    outputs.push(std::fs::read(&out).unwrap());
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 6, "k": [2, 2, 2], "rate": 0.5}"#).unwrap();
    let out = dir.path().join("o.csv");
    let mut args = sweep_args("outage", path_str(&out));
    args.extend(["--config", path_str(&cfg), "--schemes", "bsa-deterministic"]);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let result = read_csv(&out).unwrap();
    assert_eq!(result.rows.len(), 9);
    assert_eq!(result.rows.iter().map(|r| r.user).max(), Some(3));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let mut args = sweep_args("outage", path_str(&out));
    args.extend(["--schemes", "bsa-alg3"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown scheme"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n": 4, "antennas": 2}"#).unwrap();
    let mut args = sweep_args("outage", path_str(&out));
    args.extend(["--config", path_str(&cfg)]);
    assert_eq!(run(&args).status.code(), Some(2));

    let o = run(&["outage", "--snr-start", "20", "--snr-stop", "10", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_on_small_run() {
    let o = run(&["verify", "--trials", "5", "--seed", "9", "--probes", "100"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.contains("all invariants hold over 5 trials"));
    assert!(!stdout.contains("FAIL"));
}
