use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pgrtb_core::auction::{expected_second_price, LogNormalParams};
use pgrtb_core::demand::DemandModel;
use pgrtb_core::evaluation::RevenueReport;
use pgrtb_core::pricing::PGSolution;
use pgrtb_core::rlwr::MarketCurves;
use serde_json::{json, Value};

const DAY: i64 = 86_400;

fn config(dir: &Path, extra: Value) -> PathBuf {
    let mut base = json!({
        "out": "out",
        "seed": 5,
        "market": {"slots": [
            {"slot_id": "mid", "impressions": 9000, "bidders_mean": 5.0,
             "bid_dist": {"type": "lognormal", "mu": 0.0, "sigma": 0.5},
             "start": 0, "end": 6 * DAY, "diurnal_amplitude": 0.6, "advertisers": 100},
            {"slot_id": "busy", "impressions": 3000, "bidders_mean": 9.0,
             "bid_dist": {"type": "lognormal", "mu": 0.0, "sigma": 0.5},
             "start": 0, "end": 6 * DAY, "diurnal_amplitude": 0.6, "advertisers": 100}
        ]},
        "train": {"start_day": 0, "end_day": 5},
        "test": {"start_day": 5, "end_day": 6},
        "model": {"m": 60, "span": 0.3}
    });
    for (k, v) in extra.as_object().unwrap() {
        if let (Some(Value::Object(dst)), Value::Object(src)) = (base.get_mut(k), v) {
            dst.extend(src.clone());
        } else {
            base[k] = v.clone();
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&base).unwrap()).unwrap();
    path
}

fn pgrtb(config: &Path, command: &str, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgrtb"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(config: &Path, command: &str, extra: &[&str]) {
    let out = pgrtb(config, command, extra);
    assert!(out.status.success(), "{command}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("error json on stderr");
    serde_json::from_str(line).unwrap()
}

fn run_all(cfg: &Path) {
    for cmd in ["generate", "estimate", "calibrate", "solve", "evaluate"] {
        ok(cfg, cmd, &[]);
    }
}

#[test]
fn full_chain_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({}));
    run_all(&cfg);
    let out = dir.path().join("out");
    assert!(out.join("bids.csv").exists());
    for slot in ["mid", "busy"] {
        for file in ["curves.json", "dist_tests.json", "demand.json", "solution.json", "schedule.csv", "report.json"] {
            assert!(out.join(slot).join(file).exists(), "{slot}/{file}");
        }
    }

    // Estimated curve against the analytic expected second price.
    let curves: MarketCurves = read(out.join("mid/curves.json"));
    let analytic = expected_second_price(&LogNormalParams::new(0.0, 0.5).unwrap(), 5.0).unwrap();
    let phi = curves.phi(5.0).value;
    assert!((phi - analytic).abs() < 0.05 * analytic, "{phi} vs {analytic}");

    // Artifacts round-trip.
    let demand: DemandModel = read(out.join("mid/demand.json"));
    assert_eq!(serde_json::from_str::<DemandModel>(&serde_json::to_string(&demand).unwrap()).unwrap(), demand);
    let sol: PGSolution = read(out.join("mid/solution.json"));
    assert_eq!(serde_json::from_str::<PGSolution>(&serde_json::to_string(&sol).unwrap()).unwrap(), sol);
    let report: RevenueReport = read(out.join("mid/report.json"));
    assert!(report.b2 <= report.b1);
    let schedule = std::fs::read_to_string(out.join("mid/schedule.csv")).unwrap();
    assert_eq!(schedule.lines().count(), sol.schedule.len() + 1);
}

#[test]
fn solve_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({}));
    for cmd in ["generate", "estimate", "calibrate", "solve"] {
        ok(&cfg, cmd, &["--slots", "mid"]);
    }
    let path = dir.path().join("out/mid/solution.json");
    let first = std::fs::read(&path).unwrap();
    ok(&cfg, "solve", &["--slots", "mid"]);
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert!(!dir.path().join("out/busy/solution.json").exists());
}

#[test]
fn null_allocation_reports_r2_equal_b2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"model": {"fixed_gamma": 0.0}}));
    run_all(&cfg);
    let report: RevenueReport = read(dir.path().join("out/busy/report.json"));
    assert_eq!(report.r2, report.b2);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"sweep": {"parameter": "alpha", "values": [0.8, 1.0, 1.2], "gamma": 0.2}}));
    for cmd in ["generate", "estimate", "calibrate", "sweep"] {
        ok(&cfg, cmd, &["--slots", "busy"]);
    }
    let csv = std::fs::read_to_string(dir.path().join("out/busy/sweep_alpha.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({}));
    let bids = dir.path().join("out/bids.csv");
    ok(&cfg, "generate", &[]);
    let a = std::fs::read(&bids).unwrap();
    ok(&cfg, "generate", &["--seed", "6"]);
    assert_ne!(std::fs::read(&bids).unwrap(), a);
    ok(&cfg, "generate", &["--seed", "5"]);
    assert_eq!(std::fs::read(&bids).unwrap(), a);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"model": {"omega": 0.6, "kappa": 2.0}}));
    let out = pgrtb(&cfg, "generate", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "invalid_config");

    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(pgrtb(&cfg, "solve", &[]).status.code(), Some(2));

    let cfg = config(dir.path(), json!({"sweep": {"parameter": "delta", "values": [1.0]}}));
    ok(&cfg, "generate", &[]);
    ok(&cfg, "estimate", &["--slots", "mid"]);
    ok(&cfg, "calibrate", &["--slots", "mid"]);
    assert_eq!(pgrtb(&cfg, "sweep", &["--slots", "mid"]).status.code(), Some(2));
    assert_eq!(pgrtb(&cfg, "estimate", &["--slots", "nowhere"]).status.code(), Some(2));
}

#[test]
fn infeasible_problem_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({"model": {"alpha": 1.0, "zeta": 0.01, "fixed_gamma": 0.5}}));
    for cmd in ["generate", "estimate", "calibrate"] {
        ok(&cfg, cmd, &["--slots", "mid"]);
    }
    let out = pgrtb(&cfg, "solve", &["--slots", "mid"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["kind"], "infeasible");
}

#[test]
fn missing_inputs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!({}));
    let out = pgrtb(&cfg, "estimate", &[]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["kind"], "io");
    ok(&cfg, "generate", &[]);
    assert_eq!(pgrtb(&cfg, "solve", &[]).status.code(), Some(4));
}
