use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use splitguard::planner::{self, CostTable};
use splitguard::simulator::ScenarioConfig;

fn splitguard(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitguard"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, v: &impl serde::Serialize) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn exit_codes_follow_the_run_outcome() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(splitguard(&["simulate"], &out).status.code(), Some(0));
    assert_eq!(splitguard(&["demo"], &out).status.code(), Some(10));
    let mut jam = ScenarioConfig::baseline();
    jam.link.jam_intervals = vec![(3.0, 20.0)];
    let cfg = write(tmp.path(), "jam.json", &jam);
    assert_eq!(
        splitguard(&["simulate", "--config", &cfg], &out)
            .status
            .code(),
        Some(11)
    );
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["final_mode"], "FALLBACK");
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut doc = serde_json::to_value(ScenarioConfig::baseline()).unwrap();
    doc["link"]["bandwidth_bps"] = json!("fast");
    let cfg = write(tmp.path(), "bad.json", &doc);
    let o = splitguard(&["simulate", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("link.bandwidth_bps"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(
        splitguard(&["sweep", "--seeds", "99"], &out).status.code(),
        Some(2)
    );
    assert_eq!(
        splitguard(&["simulate", "--config", "/nonexistent.json"], &out)
            .status
            .code(),
        Some(2)
    );
    assert_eq!(splitguard(&["frobnicate"], &out).status.code(), Some(2));
}

#[test]
fn plan_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(splitguard(&["plan"], &out).status.code(), Some(0));
    let best = planner::optimal_cut(&CostTable::calibrated()).unwrap();
    let opt = read_json(&out.join("optimal.json"));
    assert_eq!(
        (opt["trunk_cut"].as_u64(), opt["head_cut"].as_u64()),
        (Some(3), Some(8))
    );
    assert_eq!(
        opt["end_to_end_s"].as_f64(),
        Some(best.latencies.end_to_end)
    );
    let grid = std::fs::read_to_string(out.join("latency_grid.csv")).unwrap();
    assert_eq!(
        grid.lines().count(),
        1 + planner::latency_grid(&CostTable::calibrated())
            .unwrap()
            .len()
    );
}

#[test]
fn degenerate_two_block_table_has_one_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut table = CostTable::calibrated();
    table.cuts.truncate(2);
    table.total_macs = table.cuts[1].macs;
    let cfg = write(tmp.path(), "table.json", &table);
    let o = splitguard(&["plan", "--config", &cfg], &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let opt = read_json(&out.join("optimal.json"));
    assert_eq!(
        (opt["trunk_cut"].as_u64(), opt["head_cut"].as_u64()),
        (Some(1), Some(2))
    );
    let grid = std::fs::read_to_string(out.join("latency_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
}

#[test]
fn corrupted_golden_names_the_vector() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut golden: Value =
        serde_json::from_str(include_str!("../../core/data/golden.json")).unwrap();
    let name = golden["pipeline"][0]["name"].as_str().unwrap().to_owned();
    golden["pipeline"][0]["sha256"] = json!("00".repeat(32));
    let cfg = write(tmp.path(), "golden.json", &golden);
    let o = splitguard(&["selftest", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(&name));
    let report = read_json(&out.join("selftest_report.json"));
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].contains(&name));
}
