//! End-to-end runs through the scenario harness.

use branchfront::harness::{certify_stored, list_snapshots, load_scenario, parse_config, run_scenario, Task};
use std::fs;
use std::path::{Path, PathBuf};

const LINE: &str = r#"
[scenario]
name = "line"

[reaction]
theta = 0.3

[domain]
junction_radius = 1.0

[[branch]]
angle = 180.0
length = 12.0
width = 2.0

[[branch]]
angle = 0.0
length = 40.0
width = 2.0

[time]
t_end = 30.0
scheme = "imex"

[initial]
kind = "front"
branch = 2
position = 8.0
facing = "outward"

[diagnostics]
snapshot_every = 5
speed_branches = [2]
speed_window = [10.0, 30.0]
certify_eps = [0.1]
certify_from = 10.0

[expect]
certify_slack = true
"#;

fn gallery(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn number(text: &str) -> f64 {
    text.parse().unwrap()
}

#[test]
fn stored_snapshots_can_be_certified_later() {
    let s = parse_config(LINE).unwrap();
    let run = tempfile::tempdir().unwrap();
    let live = run_scenario(&s, run.path()).unwrap();
    assert!(live.passed(), "{}", live.to_text());
    let speed = number(live.value_of("speed_2").unwrap());
    assert!((speed - 0.2828).abs() < 0.02, "speed {speed}");

    let snaps = list_snapshots(run.path(), "line").unwrap();
    assert_eq!(snaps.len(), 7);

    let out = tempfile::tempdir().unwrap();
    let later = certify_stored(&s, run.path(), out.path()).unwrap();
    assert!(later.passed(), "{}", later.to_text());
    assert_eq!(later.value_of("snapshots"), Some("5"));
    assert!(out.path().join("certification.txt").exists());
    let (a, b) = (number(live.value_of("band_width_0.1").unwrap()), number(later.value_of("band_width_0.1").unwrap()));
    assert!((a - b).abs() <= 0.4, "{a} vs {b}");
}

#[test]
fn certification_needs_snapshots() {
    let s = parse_config(LINE).unwrap();
    let empty = tempfile::tempdir().unwrap();
    assert!(certify_stored(&s, empty.path(), empty.path()).is_err());
}

#[test]
fn bounds_config_verifies() {
    let s = load_scenario(&gallery("verify-bounds.toml")).unwrap();
    assert_eq!(s.task, Task::VerifyBounds);
    let out = tempfile::tempdir().unwrap();
    let rep = run_scenario(&s, out.path()).unwrap();
    assert!(rep.passed(), "{}", rep.to_text());
    let bounds = fs::read_to_string(out.path().join("bounds.txt")).unwrap();
    for kind in ["emanation-sub", "emanation-super", "convergence-lower", "convergence-upper", "junction-lower"] {
        assert!(bounds.contains(&format!("[{kind}]")), "{kind} missing");
        assert!(rep.checks.iter().any(|c| c.name == format!("residual_{kind}")), "{kind} not checked");
    }
}

#[test]
fn wave_table_is_written() {
    let s = load_scenario(&gallery("wave-table.toml")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let rep = run_scenario(&s, out.path()).unwrap();
    assert!(rep.passed(), "{}", rep.to_text());
    let csv = fs::read_to_string(out.path().join("wave_table.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[5], "true", "{row}");
    }
}
