use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use guardmem::memory::{save_snapshot, CaseRecord, MemorySnapshot};
use guardmem::simulator::{DeploymentConfig, Method};
use guardmem::{BroadPolicy, EvidenceCounts, GatingConfig, Label, LabelHistogram, Report};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guardmem"))
        .args(args)
        .env_remove(guardmem::http::ENDPOINT_VAR)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, method: Method) -> String {
    let cfg = DeploymentConfig {
        days: 3,
        stream_per_day: 40,
        heldout_size: 100,
        method,
        ..Default::default()
    };
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

#[test]
fn calibrate_prints_minimal_supports() {
    let o = run(&["calibrate"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(str::to_string).collect();
    assert_eq!(&rows[..6], ["0,5", "1,7", "2,9", "3,11", "4,13", "5,15"]);
    let o = run(&["calibrate", "--tau", "0.0499999", "--max-contradictions", "0"]);
    assert_eq!(stdout(&o).lines().nth(1), Some("0,0"));
}

#[test]
fn calibrate_rejects_out_of_range_threshold() {
    assert_eq!(run(&["calibrate", "--tau", "1.5"]).status.code(), Some(2));
}

#[test]
fn unknown_method_is_a_usage_error() {
    let o = run(&["simulate", "--method", "lisa_plus"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("pure") && err.contains("gate_accuracy"), "{err}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = run(&["simulate", "--config", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Method::Pure);
    let o = run(&["simulate", "--config", &cfg, "--rho", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_one_row_per_day() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Method::Pure);
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics_pure_seed0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(out.join("snapshot_pure_seed0.json").exists());
}

#[test]
fn several_seeds_add_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Method::Lisa);
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", &cfg, "--seeds", "3", "--seed", "4", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for seed in 4..7 {
        assert!(out.join(format!("metrics_lisa_seed{seed}.csv")).exists());
    }
    let agg = fs::read_to_string(out.join("aggregate_lisa.csv")).unwrap();
    assert!(agg.lines().nth(1).unwrap().starts_with("0,lisa,3,"), "{agg}");
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Method::Lisa);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", &cfg, "--rho", "0.2", "--out-dir", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    for name in ["metrics_lisa_seed0.csv", "snapshot_lisa_seed0.json", "state_lisa_seed0.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn http_provider_needs_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Method::Pure);
    let o = run(&["simulate", "--config", &cfg, "--provider", "http"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(guardmem::http::ENDPOINT_VAR));
}

fn policy(id: &str, ev: (u64, u64)) -> BroadPolicy {
    BroadPolicy {
        policy_id: id.into(),
        statement: format!("statement {id}"),
        title: id.into(),
        description: String::new(),
        rule_type: Default::default(),
        recommended_label: Label::Refuse,
        evidence: EvidenceCounts::new(ev.0, ev.1),
        provenance: Default::default(),
        label_skew: LabelHistogram::default(),
        near_conflict: false,
    }
}

#[test]
fn inspect_lists_by_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.json");
    let snap = MemorySnapshot::new(3, GatingConfig::default(), vec![policy("b0", (1, 1)), policy("b1", (5, 0))], vec![])
        .unwrap();
    save_snapshot(&snap, &path).unwrap();
    let o = run(&["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].ends_with("2 broad, 0 local"));
    assert!(lines[1].contains("b1") && lines[1].contains("0.6070"), "{text}");
    assert!(lines[2].contains("b0"));
}

#[test]
fn inspect_empty_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.json");
    save_snapshot(&MemorySnapshot::empty(GatingConfig::default()), &path).unwrap();
    let o = run(&["inspect", path.to_str().unwrap()]);
    assert!(stdout(&o).contains("0 broad, 0 local"));
}

#[test]
fn inspect_corrupt_file_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let snap = MemorySnapshot::new(1, GatingConfig::default(), vec![policy("b0", (1, 0)), policy("b7", (2, 0))], vec![])
        .unwrap();
    let text = snap.to_json().replacen("\"recommended_label\": \"REFUSE\"", "\"recommended_label\": 7", 2);
    let text = text.replacen("\"recommended_label\": 7", "\"recommended_label\": \"REFUSE\"", 1);
    fs::write(&path, text).unwrap();
    let o = run(&["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broad[1] (id `b7`)"), "{}", stderr(&o));
}

fn report(id: &str, summary: &str, attrs: &[(&str, &str)], corrected: Label) -> Report {
    let case = CaseRecord {
        case_id: id.into(),
        namespace: "privacy".into(),
        scenario_text: format!("A request to share {summary}."),
        scenario_summary: summary.into(),
        group_id: format!("g-{id}"),
        attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    };
    Report::new(case, corrected.flipped(), corrected, 1).unwrap()
}

#[test]
fn refresh_builds_state_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let attrs = [("info", "salary"), ("recipient", "manager")];
    let reports = vec![
        report("c1", "salary manager coordination", &attrs, Label::Allow),
        report("c2", "salary manager support", &attrs, Label::Allow),
        report("c3", "salary manager gossip", &attrs, Label::Refuse),
    ];
    let reports_path = dir.path().join("reports.json");
    fs::write(&reports_path, serde_json::to_string(&reports).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "refresh",
        "--reports",
        reports_path.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("snapshot v1: 1 broad"), "{}", stdout(&o));
    let state = out.join("state.json");
    let again = dir.path().join("again");
    let o = run(&["refresh", "--state", state.to_str().unwrap(), "--out-dir", again.to_str().unwrap()]);
    assert!(stdout(&o).contains("snapshot v2: 1 broad"), "{}", stdout(&o));
    assert!(stdout(&o).contains("(0 inducer calls)"));
}

#[test]
fn refresh_rejects_non_misclassifications() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = report("c1", "salary manager", &[], Label::Allow);
    r.predicted_label = Label::Allow;
    let path = dir.path().join("reports.json");
    fs::write(&path, serde_json::to_string(&[r]).unwrap()).unwrap();
    let o = run(&["refresh", "--reports", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gap_curves_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gap-curves", "--ns", "4,10", "--accuracies", "0.5,1.0", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("gap_curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let row = csv.lines().find(|l| l.starts_with("10,1,")).unwrap();
    assert!(row.starts_with("10,1,10,0.761"), "{row}");
    let neg = csv.lines().find(|l| l.starts_with("4,0.5,")).unwrap();
    assert!(neg.split(',').nth(4).unwrap().starts_with('-'), "{neg}");
}

#[test]
fn verify_writes_check_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--trials", "200", "--draws", "5000", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("check,passed,detail\n"));
    assert_eq!(csv.lines().filter(|l| l.contains(",true,")).count(), 9, "{csv}");
}
