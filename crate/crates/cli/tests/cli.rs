use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use benfordkit::report::StudyReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_benfordkit"))
}

fn analyze(config: &Path, inputs: &[PathBuf], out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("analyze")
        .arg("--config")
        .arg(config)
        .arg("--input")
        .args(inputs)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

const SMALL_CONFIG: &str = r#"
groups = ["A", "B"]
replications = 99
seed = 3
[cumulative_cutoff_per_group]
A = 2020-03-31
B = 2020-03-31
"#;

fn small_inputs(dir: &Path) -> (PathBuf, Vec<PathBuf>) {
    let config = dir.join("study.toml");
    fs::write(&config, SMALL_CONFIG).unwrap();
    let mut csv = String::from("unit_id,group_id,date,measure,kind,value\n");
    for (g, scale) in [("A", 3u64), ("B", 5)] {
        for day in 1..=31u64 {
            for (measure, m) in [("cases", 7u64), ("deaths", 2)] {
                let value = scale * m * day * day + day;
                csv.push_str(&format!("{g}1,{g},2020-03-{day:02},{measure},cumulative,{value}\n"));
            }
        }
    }
    let input = dir.join("data.csv");
    fs::write(&input, csv).unwrap();
    (config, vec![input])
}

#[test]
fn benford_table_single_position() {
    let out = bin().args(["benford-table", "--digit", "2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.lines().nth(1).unwrap().ends_with(",12.0"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().arg("nonsense").output().unwrap().status.code(), Some(1));
    let out = bin().args(["benford-table", "--digit", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let (config, inputs) = small_inputs(dir.path());
    let out_dir = dir.path().join("out");
    let out = analyze(
        &config,
        &inputs,
        &out_dir,
        &["--digit", "1", "--replications", "49", "--alpha", "0.1", "--focal-group", "B"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = StudyReport::from_json(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let cfg = &report.config_echo;
    assert_eq!(cfg.replications, 49);
    assert_eq!(cfg.alpha, 0.1);
    assert_eq!(cfg.focal_group.as_deref(), Some("B"));
    assert_eq!(cfg.seed, 3);
    // 1 position x 2 measures x 2 kinds x 2 groups
    assert_eq!(report.gof_results.tests.len(), 8);
    assert!(report.gof_results.tests.iter().all(|t| t.replications == 49));
    assert!(report
        .independence_results
        .tests
        .iter()
        .any(|t| t.label.ends_with("B vs rest")));
}

#[test]
fn second_digit_strict_raises_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let (config, inputs) = small_inputs(dir.path());
    let out_dir = dir.path().join("out");
    let out = analyze(&config, &inputs, &out_dir, &["--digit", "2", "--second-digit-strict"]);
    assert!(out.status.success());
    let report = StudyReport::from_json(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.config_echo.second_digit_min, 11);
}

#[test]
fn csv_bundle_has_seven_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (config, inputs) = small_inputs(dir.path());
    let out_dir = dir.path().join("bundle");
    let out = analyze(&config, &inputs, &out_dir, &["--format", "csv-bundle"]);
    assert!(out.status.success());
    let mut names: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for name in names {
        let text = fs::read_to_string(out_dir.join(&name)).unwrap();
        assert!(text.starts_with("schema_version,"), "{name}");
    }
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = small_inputs(dir.path());
    let out_dir = dir.path().join("out");

    let extra = dir.path().join("extra.csv");
    fs::write(&extra, "unit_id,group_id,date,measure,kind,value,note\nA1,A,2020-03-01,cases,daily,1,x\n").unwrap();
    let out = analyze(&config, &[extra], &out_dir, &[]);
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "unit_id,group_id,date,measure,kind,value\nA1,A,2020-03-01,cases,daily,12.5\n").unwrap();
    let out = analyze(&config, &[bad], &out_dir, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = dir.path().join("missing.csv");
    assert_eq!(analyze(&config, std::slice::from_ref(&missing), &out_dir, &[]).status.code(), Some(1));
    assert_eq!(
        analyze(&dir.path().join("nope.toml"), &[missing], &out_dir, &[]).status.code(),
        Some(1)
    );

    let (_, inputs) = small_inputs(dir.path());
    let out = analyze(&config, &inputs, &out_dir, &["--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_sweep_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.toml");
    fs::write(
        &spec,
        r#"
seed = 11
[[specs]]
model = "geometric"
initial = 1.0
rate = 2.0
horizon = 200

[[specs]]
model = "logistic"
initial = 5.0
rate = 0.3
capacity = 100000.0
horizon = 120
noise_sd = 0.05
seed = 4
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let out = bin()
        .arg("synth-sweep")
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir)
        .args(["--replications", "199"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["replications"], 199);
    assert_eq!(json["seed"], 11);
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}
