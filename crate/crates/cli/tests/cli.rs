//! The `tomcraft` binary end to end, against the shipped example configs.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tomcraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomcraft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn run_config(name: &str, out: &Path) -> Output {
    let config = configs().join(name);
    tomcraft(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn solo_run_writes_records_and_replays_identically() {
    let out = tempfile::tempdir().unwrap();
    let run = run_config("dirt_solo.toml", out.path());
    assert_eq!(run.status.code(), Some(0), "{}", text(&run.stderr));
    let dir = out.path().join("dirt-solo");
    for file in [
        "spec.json",
        "report.json",
        "report.txt",
        "curve.tsv",
        "trials.jsonl",
        "memory.jsonl",
    ] {
        assert!(dir.join(file).exists(), "missing {file}");
    }
    let replay = tomcraft(&["replay", dir.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(0));
    assert_eq!(
        text(&replay.stdout),
        std::fs::read_to_string(dir.join("report.txt")).unwrap()
    );

    let trial = tomcraft(&["replay", dir.to_str().unwrap(), "--trial", "2"]);
    assert!(text(&trial.stdout).contains("--- completion ---\n```\nmine dirt\n```"));
    let missing = tomcraft(&["replay", dir.to_str().unwrap(), "--trial", "99"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn coached_novice_succeeds_after_one_round() {
    let out = tempfile::tempdir().unwrap();
    let run = run_config("dirt_instructive.toml", out.path());
    assert_eq!(run.status.code(), Some(0), "{}", text(&run.stderr));
    let tsv = std::fs::read_to_string(out.path().join("dirt-instructive/curve.tsv")).unwrap();
    assert_eq!(
        tsv,
        "round\tfraction\n0\t0.0000\n1\t1.0000\n2\t1.0000\n3\t1.0000\n"
    );
}

#[test]
fn config_errors_exit_2() {
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[experiment]\nrun_id = \"x\"\nsetting = \"solo\"\ntask = \"mine_dirt\"\ntrials = 0\n",
    )
    .unwrap();
    let run = tomcraft(&[
        "run",
        bad.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(text(&run.stderr).contains("trials must be at least 1"));

    let unknown = out.path().join("unknown.toml");
    std::fs::write(
        &unknown,
        "[experiment]\nrun_id = \"x\"\nsetting = \"solo\"\ntask = \"mine_gold\"\n",
    )
    .unwrap();
    assert_eq!(
        tomcraft(&["run", unknown.to_str().unwrap()]).status.code(),
        Some(2)
    );

    // A human setting has no gate outside `serve`.
    let human = configs().join("dirt_human.toml");
    let run = tomcraft(&[
        "run",
        human.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn outage_exits_3_and_marks_the_report() {
    let out = tempfile::tempdir().unwrap();
    let run = run_config("dirt_outage.toml", out.path());
    assert_eq!(run.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("dirt-outage/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["incomplete"], true);
    assert_eq!(report["outage_trials"], serde_json::json!([0, 1]));
    let replay = tomcraft(&["replay", out.path().join("dirt-outage").to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(3));
}

#[test]
fn curriculum_config_runs_the_tech_tree() {
    let out = tempfile::tempdir().unwrap();
    let run = run_config("techtree.toml", out.path());
    assert_eq!(run.status.code(), Some(0), "{}", text(&run.stderr));
    let stdout = text(&run.stdout);
    assert!(stdout.contains("Wooden Tool  3 ± 0 (3/3)"), "{stdout}");
    assert!(stdout.contains("Iron Tool    10 ± 0 (3/3)"), "{stdout}");
    let dir = out.path().join("techtree");
    let replay = tomcraft(&["replay", dir.to_str().unwrap()]);
    assert_eq!(
        text(&replay.stdout),
        std::fs::read_to_string(dir.join("report.txt")).unwrap()
    );

    // One snapshot per curriculum, each holding the skills it learned.
    let dump = tomcraft(&["dump-memory", dir.to_str().unwrap()]);
    assert_eq!(dump.status.code(), Some(0));
    let lines: Vec<serde_json::Value> = text(&dump.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines
        .iter()
        .all(|d| !d["skills"].as_array().unwrap().is_empty()));
}

#[test]
fn population_command_writes_a_curve() {
    let out = tempfile::tempdir().unwrap();
    let config = configs().join("population.toml");
    let run = tomcraft(&[
        "population",
        config.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", text(&run.stderr));
    assert!(out.path().join("population/population.json").exists());
    let tsv = std::fs::read_to_string(out.path().join("population/curve.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 6);
}

#[test]
fn dump_memory_reads_a_store_directory() {
    let dir = tempfile::tempdir().unwrap();
    let semantic = concat!(
        r#"{"question":"How to mine 1 dirt in Minecraft?","answer":"Punch it.","#,
        r#""source":"communication","revision":1}"#,
        "\n"
    );
    std::fs::write(dir.path().join("semantic.log"), semantic).unwrap();
    let dump = tomcraft(&["dump-memory", dir.path().to_str().unwrap()]);
    assert_eq!(dump.status.code(), Some(0), "{}", text(&dump.stderr));
    let value: serde_json::Value = serde_json::from_str(text(&dump.stdout).trim()).unwrap();
    assert_eq!(value["semantic"][0]["answer"], "Punch it.");
    assert_eq!(value["episodic"], serde_json::json!([]));
    // Reading must not create the missing logs.
    assert!(!dir.path().join("episodic.log").exists());
}

#[test]
fn serve_exposes_a_recorded_run() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(
        run_config("dirt_instructive.toml", out.path())
            .status
            .code(),
        Some(0)
    );
    let dir = out.path().join("dirt-instructive");
    let mut child = Command::new(env!("CARGO_BIN_EXE_tomcraft"))
        .args(["serve", dir.to_str().unwrap(), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on http://")
        .expect("address line")
        .to_string();
    let (host, path) = base.split_once('/').unwrap();

    let mut stream = std::net::TcpStream::connect(host).unwrap();
    write!(
        stream,
        "GET /{path}/transcript HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut response = String::new();
    std::io::Read::read_to_string(&mut stream, &mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("Run exactly `mine dirt`."));
}
