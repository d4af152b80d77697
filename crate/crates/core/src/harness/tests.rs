use super::*;
use crate::geometry::{BranchSpec, DomainSpec};
use crate::solver::{max_stable_dt, Scheme};
use std::fs;

const STRAIGHT: &str = r#"
[scenario]
name = "straight"

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
length = 20.0
width = 2.0

[time]
t_end = 4.0

[initial]
kind = "front"
branch = 2
position = 8.0
facing = "outward"
"#;

fn gallery() -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .map(|p| (p.display().to_string(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn issues(text: &str) -> Vec<ConfigIssue> {
    parse_config(text).expect_err("config should be rejected").issues
}

fn line_of(text: &str, needle: &str) -> usize {
    text.lines().position(|l| l.trim_start().starts_with(needle)).unwrap() + 1
}

#[test]
fn minimal_config_gets_defaults() {
    let s = parse_config(STRAIGHT).unwrap();
    assert_eq!(s.task, Task::Simulate);
    assert_eq!(s.h, Some(0.2));
    let grid = MaskedGrid::build(s.domain.as_ref().unwrap(), 0.2).unwrap();
    let sim = s.sim.as_ref().unwrap();
    assert_eq!(sim.scheme, Scheme::Explicit);
    assert_eq!(sim.dt, 0.9 * max_stable_dt(&grid, &s.models, Scheme::Explicit));
    // Hand value: 0.9 / (4 / 0.04 + 1.05 * 0.7).
    assert!((sim.dt - 0.9 / (100.0 + 0.735)).abs() < 1e-9);
    assert_eq!(sim.output_every, 1.0);
    assert_eq!(s.diagnostics, DiagnosticPlan::default());
    assert_eq!(s.expect, Expectations::default());
}

#[test]
fn threshold_outside_unit_interval_is_located() {
    let text = STRAIGHT.replace("theta = 0.3", "theta = 1.2");
    let found = issues(&text);
    let hit = found.iter().find(|i| i.message.contains("threshold outside (0,1)")).expect("threshold issue");
    assert_eq!(hit.line, Some(line_of(&text, "theta")));
    assert_eq!(hit.section, "reaction");
    assert_eq!(hit.key.as_deref(), Some("theta"));
}

#[test]
fn every_problem_is_reported() {
    let text = STRAIGHT
        .replace("theta = 0.3", "theta = -1.0\ncolour = \"red\"")
        .replace("width = 2.0\n\n[time]", "width = -2.0\n\n[time]")
        .replace("facing = \"outward\"", "facing = \"sideways\"");
    let found = issues(&text);
    assert!(found.len() >= 4, "{found:?}");
    assert!(found.iter().any(|i| i.message.contains("threshold")));
    assert!(found.iter().any(|i| i.key.as_deref() == Some("colour") && i.message == "unknown key"));
    assert!(found.iter().any(|i| i.section == "branch 2" && i.key.as_deref() == Some("width")));
    assert!(found.iter().any(|i| i.key.as_deref() == Some("facing")));
    let lines: Vec<usize> = found.iter().filter_map(|i| i.line).collect();
    assert!(lines.windows(2).all(|w| w[0] <= w[1]), "issues out of file order: {lines:?}");
}

#[test]
fn unknown_sections_and_missing_keys() {
    let text = format!("{STRAIGHT}\n[plotting]\ndpi = 3\n").replace("t_end = 4.0", "");
    let found = issues(&text);
    assert!(found.iter().any(|i| i.section == "plotting" && i.message == "unknown section"));
    assert!(found.iter().any(|i| i.key.as_deref() == Some("t_end") && i.message == "missing required key"));
}

#[test]
fn references_to_missing_branches_are_rejected() {
    let text = STRAIGHT.replace("branch = 2", "branch = 5");
    assert!(issues(&text).iter().any(|i| i.section == "initial" && i.message.contains('5')));
}

#[test]
fn unstable_step_is_rejected_with_its_line() {
    let text = STRAIGHT.replace("t_end = 4.0", "t_end = 4.0\ndt = 0.5");
    let found = issues(&text);
    assert_eq!(found.len(), 1, "{found:?}");
    assert_eq!(found[0].line, Some(line_of(&text, "dt")));
}

#[test]
fn short_branches_fail_the_travel_budget() {
    let text = STRAIGHT.replace("t_end = 4.0", "t_end = 40.0")
        + "\n[diagnostics]\nspeed_branches = [2]\n";
    let found = issues(&text);
    assert!(found.iter().any(|i| i.key.as_deref() == Some("t_end") && i.message.contains("branch 2 is too short")));
    // Without tracked fronts the same run is accepted.
    assert!(parse_config(&STRAIGHT.replace("t_end = 4.0", "t_end = 40.0")).is_ok());
}

#[test]
fn serialization_is_a_fixed_point() {
    let first = parse_config(STRAIGHT).unwrap();
    let text = serialize_config(&first);
    let second = parse_config(&text).unwrap();
    assert_eq!(first, second);
    assert_eq!(serialize_config(&second), text);
}

#[test]
fn gallery_configs_are_canonical() {
    let all = gallery();
    assert!(all.len() >= 5);
    for (path, text) in all {
        let s = parse_config(&text).unwrap_or_else(|e| panic!("{path}:\n{e}"));
        assert_eq!(serialize_config(&s), text, "{path} is not in canonical form");
        assert_eq!(parse_config(&serialize_config(&s)).unwrap(), s);
    }
}

#[test]
fn export_import_is_bitwise() {
    let b = |deg| BranchSpec::at_angle(deg, WidthProfile::Constant(2.0), 9.0);
    let spec = DomainSpec::new(3.0, vec![b(90.0), b(210.0), b(330.0)], None).unwrap();
    let grid = MaskedGrid::build(&spec, 0.25).unwrap();
    let values: Vec<f64> = (0..grid.len()).map(|c| ((c as f64) * 0.618_033_988_7).fract() / 3.0).collect();
    let u = ScalarField::new(1.0 / 3.0, values);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(snapshot_name("y", 7));
    export_field(&u, &grid, &path).unwrap();
    let back = import_field(&path, &grid).unwrap();
    assert_eq!(back.t.to_bits(), u.t.to_bits());
    assert!(back.values.iter().zip(&u.values).all(|(a, b)| a.to_bits() == b.to_bits()));

    let other = MaskedGrid::build(&spec, 0.2).unwrap();
    assert!(matches!(import_field(&path, &other), Err(HarnessError::Format { .. })));
}

#[test]
fn snapshot_names_sort_by_index() {
    assert_eq!(snapshot_name("run", 42), "run_t000042.field");
    let mut names: Vec<String> = [100, 9, 10, 0, 99_999].iter().map(|&i| snapshot_name("a", i)).collect();
    names.sort();
    assert_eq!(names, ["a_t000000.field", "a_t000009.field", "a_t000010.field", "a_t000100.field", "a_t099999.field"]);
}

#[test]
fn snapshots_are_listed_in_time_order() {
    let dir = tempfile::tempdir().unwrap();
    for name in [snapshot_name("s", 3), snapshot_name("s", 1), snapshot_name("other", 2), "s_tx.field".into()] {
        fs::write(dir.path().join(name), "").unwrap();
    }
    let found = list_snapshots(dir.path(), "s").unwrap();
    let names: Vec<String> = found.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["s_t000001.field", "s_t000003.field"]);
}

fn tracked() -> Scenario {
    let text = STRAIGHT.to_string()
        + "\n[diagnostics]\nsnapshot_every = 2\nspeed_branches = [2]\nspeed_window = [1.0, 4.0]\n";
    parse_config(&text).unwrap()
}

#[test]
fn runs_are_deterministic() {
    let s = tracked();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let stale = a.path().join(snapshot_name(&s.name, 999));
    fs::write(&stale, "old").unwrap();
    let ra = run_scenario(&s, a.path()).unwrap();
    assert!(!stale.exists());
    let rb = run_scenario(&s, b.path()).unwrap();
    assert!(ra.passed(), "{}", ra.to_text());
    assert_eq!(ra.to_text(), rb.to_text());
    for f in ["interfaces.csv", "probes.csv", "speeds.csv", "report.txt", "scenario.toml"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    for p in list_snapshots(a.path(), &s.name).unwrap() {
        assert_eq!(fs::read(&p).unwrap(), fs::read(b.path().join(p.file_name().unwrap())).unwrap());
    }
    // The echoed config reproduces the scenario.
    let echoed = fs::read_to_string(a.path().join("scenario.toml")).unwrap();
    assert_eq!(parse_config(&echoed).unwrap(), s);
}

#[test]
fn plot_script_runs_on_outputs_alone() {
    let python = std::process::Command::new("python3")
        .args(["-c", "import matplotlib, numpy"])
        .status()
        .is_ok_and(|s| s.success());
    if !python {
        eprintln!("python3 with matplotlib and numpy not found; plot script not exercised");
        return;
    }
    let s = tracked();
    let run = tempfile::tempdir().unwrap();
    run_scenario(&s, run.path()).unwrap();
    // Copy only the data files so the script cannot reach the solver.
    let copy = tempfile::tempdir().unwrap();
    for e in fs::read_dir(run.path()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv" || x == "field") {
            fs::copy(&p, copy.path().join(p.file_name().unwrap())).unwrap();
        }
    }
    let script = emit_plots(copy.path()).unwrap();
    let status = std::process::Command::new("python3").arg(&script).arg(copy.path()).status().unwrap();
    assert!(status.success());
    assert!(copy.path().join("interfaces.png").exists());
    let fields = list_snapshots(copy.path(), &s.name).unwrap();
    assert!(!fields.is_empty());
    assert!(fields.iter().all(|f| f.with_extension("png").exists()));
}

#[test]
fn report_text_reflects_checks() {
    let mut r = ExitReport {
        scenario: "x".into(),
        task: Task::Simulate,
        checks: vec![Check { name: "a".into(), passed: true, detail: "fine".into() }],
        values: vec![("speed".into(), "0.28".into())],
        files: Vec::new(),
    };
    assert!(r.passed());
    assert_eq!(r.exit_code(), 0);
    assert_eq!(r.value_of("speed"), Some("0.28"));
    assert!(r.to_text().contains("check a: PASS (fine)"));
    r.checks.push(Check { name: "b".into(), passed: false, detail: "bad".into() });
    assert!(!r.passed());
    assert_eq!(r.exit_code(), 1);
    assert!(r.to_text().ends_with("status: FAIL\n"));
}

#[test]
fn wave_rows_follow_the_sign_rule() {
    let text = "[scenario]\nname = \"w\"\ntask = \"wave-table\"\n\n[reaction]\ntheta = 0.3\n\n[waves]\nthetas = [0.25, 0.5, 0.75]\n";
    let s = parse_config(text).unwrap();
    let rows = wave_rows(&s).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!((r.speed - r.closed_form).abs() < 1e-3, "{r:?}");
        assert!(r.sign_agrees(1e-6));
    }
    assert!(rows[1].speed.abs() < 1e-6);
}
