use assert_cmd::Command;
use predicates::prelude::*;
use std::fs;

const SMALL_CONFIG: &str = r#"
name = "cli-test"
seed = 7
space_bits = 16
duration_limit_s = 300.0

[inference]
port_start = 40000
port_end = 40019
"#;

fn frameside() -> Command {
    let mut cmd = Command::cargo_bin("frameside").unwrap();
    cmd.env_remove("FRAMESIDE_OUT");
    cmd
}

fn write_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

#[test]
fn run_succeeds_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");
    frameside()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success()
        .stdout(predicate::str::contains("outcome = success"));
    assert!(out.join("summary.txt").exists());
    assert!(out.join("probes.csv").exists());
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn failed_attack_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = SMALL_CONFIG.to_string();
    text.push_str("\n[channel]\nap_isolation = true\n");
    let cfg = tmp.path().join("scenario.toml");
    fs::write(&cfg, text).unwrap();
    frameside()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .assert()
        .code(2)
        .stdout(predicate::str::contains("outcome = failure:scan"));
}

#[test]
fn bad_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("scenario.toml");
    fs::write(&cfg, "space_bits = \"lots\"\n").unwrap();
    frameside()
        .args(["run", "--config"])
        .arg(&cfg)
        .assert()
        .code(1)
        .stderr(predicate::str::contains("parsing config"));
}

#[test]
fn trace_replay_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");
    frameside()
        .args(["run", "--trace", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    let trace = out.join("trace.csv");
    frameside()
        .arg("replay")
        .arg(&trace)
        .assert()
        .success()
        .stdout(predicate::str::contains("frames:"));
}

#[test]
fn corrupt_trace_reports_line_number_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("trace.csv");
    fs::write(
        &path,
        "# frameside-trace v1\nt_us,channel,addr1,addr2,kind,len,amsdu\nnot,a,frame\n",
    )
    .unwrap();
    frameside()
        .arg("replay")
        .arg(&path)
        .assert()
        .code(1)
        .stderr(predicate::str::contains("line 3"));
}

#[test]
fn report_renders_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");
    frameside()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success();
    frameside()
        .arg("report")
        .arg(out.join("summary.txt"))
        .assert()
        .success()
        .stdout(predicate::str::contains("outcome: success"));
}

#[test]
fn env_var_overrides_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let env_out = tmp.path().join("env-out");
    frameside()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("ignored"))
        .env("FRAMESIDE_OUT", &env_out)
        .assert()
        .success();
    assert!(env_out.join("summary.txt").exists());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn sweep_writes_table_and_prints_success_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");
    frameside()
        .args(["sweep", "--axis", "channel.loss_prob", "--values", "0,0.1", "--trials", "2"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .assert()
        .success()
        .stdout(predicate::str::contains("channel.loss_prob = 0: success"));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.starts_with("# frameside-sweep v1"));
    assert!(table.contains("channel.loss_prob,trial,seed,outcome"));
}

#[test]
fn unknown_axis_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    frameside()
        .args(["sweep", "--axis", "victim.shoe_size", "--values", "9"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .assert()
        .code(1)
        .stderr(predicate::str::contains("unknown sweep axis"));
}
