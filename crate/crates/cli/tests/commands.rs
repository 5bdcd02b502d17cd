use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn shapey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapey"))
        .args(args)
        .env_remove("SHAPEY_WORKERS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let base = dir.join("data");
    let mut args = vec![
        "synth",
        "--out",
        s(&base),
        "--categories",
        "2",
        "--instances",
        "1",
        "--dim",
        "16",
    ];
    args.extend_from_slice(extra);
    let out = shapey(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    base.with_extension("emb")
}

#[test]
fn synth_run_report_errors_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let emb = synth(dir.path(), &["--noise", "0.5"]);
    let csv = dir.path().join("out.csv");
    let report = dir.path().join("out.json");
    let out = shapey(&[
        "run",
        "--embeddings",
        s(&emb),
        "--dims",
        "p,pw",
        "--radii",
        "none,0..3",
        "--csv",
        s(&csv),
        "--report",
        s(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 10);
    assert!(stdout.starts_with("p:none:none  qualified=682"));

    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        csv_text.lines().next().unwrap(),
        shapey::metrics_report::CSV_HEADER
    );
    assert_eq!(csv_text.lines().count(), 11);

    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["run"]["specs"].as_array().unwrap().len(), 10);
    assert_eq!(json["run"]["metric"], "correlation");

    let replay = shapey(&["report", s(&report)]);
    assert!(replay.status.success());
    assert!(String::from_utf8(replay.stdout)
        .unwrap()
        .contains(&csv_text));

    let errors = shapey(&["errors", s(&report), "-n", "3"]);
    assert!(errors.status.success());
    assert!(String::from_utf8(errors.stdout).unwrap().lines().count() <= 3 * 4 + 1);
}

#[test]
fn explicit_specs_and_worker_env() {
    let dir = tempfile::tempdir().unwrap();
    let emb = synth(dir.path(), &[]);
    let out = Command::new(env!("CARGO_BIN_EXE_shapey"))
        .args([
            "run",
            "--embeddings",
            s(&emb),
            "--spec",
            "pw:2:none",
            "--spec",
            "x:none:none",
        ])
        .args([
            "--csv",
            s(&dir.path().join("a.csv")),
            "--report",
            s(&dir.path().join("a.json")),
        ])
        .env("SHAPEY_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let specs: Vec<_> = stdout
        .lines()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(specs, ["pw:2:none", "x:none:none"]);
}

#[test]
fn validate_reports_shape_and_domain_failures() {
    let dir = tempfile::tempdir().unwrap();
    let emb = synth(dir.path(), &[]);
    let names = emb.with_extension("names");
    let ok = shapey(&["validate", s(&names)]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8(ok.stdout)
        .unwrap()
        .contains("cat1: 1 instances"));

    let text = std::fs::read_to_string(&names).unwrap();
    let holed: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let holed_path = dir.path().join("holed.names");
    std::fs::write(&holed_path, holed).unwrap();
    let missing = shapey(&["validate", s(&holed_path)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("cat0.00.x.00.d"));
    assert_eq!(
        shapey(&["validate", "--partial", s(&holed_path)])
            .status
            .code(),
        Some(0)
    );

    let duplicated = format!("{text}{}\n", text.lines().next().unwrap());
    let dup_path = dir.path().join("dup.names");
    std::fs::write(&dup_path, duplicated).unwrap();
    assert_eq!(shapey(&["validate", s(&dup_path)]).status.code(), Some(1));
}

#[test]
fn contrast_modes_need_light_views() {
    let dir = tempfile::tempdir().unwrap();
    let emb = synth(dir.path(), &[]);
    let args = |mode: &'static str| {
        shapey(&[
            "run",
            "--embeddings",
            s(&emb),
            "--dims",
            "p",
            "--radii",
            "2",
            "--mode",
            mode,
            "--csv",
            s(&dir.path().join("c.csv")),
            "--report",
            s(&dir.path().join("c.json")),
        ])
    };
    assert_eq!(args("none").status.code(), Some(0));
    let hard = args("hard");
    assert_eq!(hard.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&hard.stderr).contains("hard"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let emb = synth(dir.path(), &[]);
    let same = shapey(&[
        "run",
        "--embeddings",
        s(&emb),
        "--csv",
        "x.out",
        "--report",
        "x.out",
    ]);
    assert_eq!(same.status.code(), Some(2));
    let bad_spec = shapey(&["run", "--embeddings", s(&emb), "--spec", "wp:2:none"]);
    assert_eq!(bad_spec.status.code(), Some(2));
    let bad_radius = shapey(&["run", "--embeddings", s(&emb), "--radii", "11"]);
    assert_eq!(bad_radius.status.code(), Some(2));
    assert_eq!(shapey(&["report", s(&emb)]).status.code(), Some(2));
}

#[test]
fn help_documents_the_spec_grammar() {
    let help = String::from_utf8(shapey(&["run", "--help"]).stdout).unwrap();
    assert!(help.contains("<dims>:<radius>:<mode>"));
    assert!(help.contains("all31"));
    assert!(help.contains("SHAPEY_WORKERS"));
}
