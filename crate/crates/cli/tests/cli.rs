use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wardfair(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wardfair"))
        .args(args)
        .env("WARDFAIR_OUT", out)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes a small fixture and returns `[tables..., "--schema", schema]`.
fn fixture(dir: &Path) -> Vec<String> {
    let data = dir.join("data");
    let o = wardfair(&["synth", "--wards", "24", "--seed", "5"], &data);
    let listed = ok(&o);
    let paths: Vec<PathBuf> = listed.lines().map(PathBuf::from).collect();
    assert!(paths.iter().all(|p| p.is_file()));
    let (schema, tables) = paths.split_last().unwrap();
    let mut args: Vec<String> = tables.iter().map(|p| p.display().to_string()).collect();
    args.push("--schema".into());
    args.push(schema.display().to_string());
    args
}

fn with<'a>(head: &[&'a str], data: &'a [String], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(data.iter().map(String::as_str)).chain(tail.iter().copied()).collect()
}

#[test]
fn single_step_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let out = dir.path().join("out");

    ok(&wardfair(&with(&["ingest"], &data, &[]), &out));
    assert!(out.join("joined.csv").is_file());

    let text = ok(&wardfair(&with(&["train"], &data, &["--model", "lr"]), &out));
    assert!(text.contains("MAE"));
    assert!(out.join("model.json").is_file());

    let model = out.join("model.json").display().to_string();
    let text = ok(&wardfair(&with(&["audit"], &data, &["--load", &model, "--features", "Chinese,Muslim"]), &out));
    assert!(text.contains("Chinese") && text.contains("Muslim"));
    assert!(out.join("audit.csv").is_file());

    let text = ok(&wardfair(
        &with(&["mitigate"], &data, &["--model", "lr", "--split", "random", "--method", "mixup", "--feature", "Indian"]),
        &out,
    ));
    assert!(text.contains("ΔMAE"));
    assert!(out.join("augmented.csv").is_file());

    ok(&wardfair(&with(&["intersect"], &data, &["--model", "lr", "--race", "Chinese,Indian"]), &out));
    assert!(out.join("table4.md").is_file() && out.join("blind_spots.json").is_file());

    let text = ok(&wardfair(&with(&["drift"], &data, &["--cohort-a", "2016", "--cohort-b", "2021-2022"]), &out));
    assert!(text.starts_with("MMD"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("drift.json")).unwrap()).unwrap();
    assert_eq!(report["cohort_b"], serde_json::json!([2021, 2022]));
}

#[test]
fn run_executes_a_config_and_honours_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.json");
    std::fs::write(
        &config,
        r#"{
            "data": {"source": "synthetic", "wards": 20, "seed": 1},
            "models": [{"kind": "linear"}],
            "splits": [{"mode": "random", "test_fraction": 0.2}],
            "mitigations": [{"method": "reweight"}],
            "runs": 2,
            "output_dir": "ignored"
        }"#,
    )
    .unwrap();
    let out = dir.path().join("results");
    let o = Command::new(env!("CARGO_BIN_EXE_wardfair"))
        .args(["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "2"])
        .output()
        .unwrap();
    ok(&o);
    for name in ["table1.md", "table2.md", "manifest.json", "runs.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"data": {"source": "synthetic"}, "models": [], "splits": []}"#).unwrap();
    let o = wardfair(&["run", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid config"));

    std::fs::write(&config, "not json").unwrap();
    let o = wardfair(&["run", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_cells_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.json");
    // the temporal split asks for a year the fixture does not contain
    std::fs::write(
        &config,
        r#"{
            "data": {"source": "synthetic", "wards": 20, "years": [2016, 2019]},
            "models": [{"kind": "linear"}],
            "splits": [
                {"mode": "random", "test_fraction": 0.25},
                {"mode": "temporal", "train_years": [2016, 2017], "test_years": [2030]}
            ],
            "runs": 1
        }"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = wardfair(&["run", "--config", config.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\"") && manifest.contains("\"completed\""));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wardfair(&["train", "a.csv", "--schema", "s.json", "--model", "svm"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
