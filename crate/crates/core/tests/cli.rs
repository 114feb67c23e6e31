use std::path::Path;
use std::process::{Command, Output};

fn dpsnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpsnet")).args(args).output().expect("run dpsnet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_then_train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dpsnet(&["synth", "--seed", "4", "--count", "3", "--size", "96x96", "--difficulty", "0.5", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["images/0002.ppm", "masks/0000.pgm", "boundaries/0001.pgm"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let config = dir.path().join("run.conf");
    std::fs::write(&config, "# initial weights only\nepochs = 0\n").unwrap();
    let run = dir.path().join("run");
    let out = dpsnet(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log, "epoch,step,lr,wbce,wiou,bbce,total\n");

    let csv = dir.path().join("metrics.csv");
    let ck = run.join("checkpoint.bin");
    let out = dpsnet(&["evaluate", "--checkpoint", p(&ck), "--data", p(&data), "--csv", p(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "image,mae,s_measure,e_measure,weighted_f");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0000,") && lines[4].starts_with("mean,"));
}

#[test]
fn train_on_generated_scenes_logs_each_step() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "epochs = 1\nbatch_size = 2\ninput_size = 64x64\npatch_grid = 2\n").unwrap();
    let run = dir.path().join("run");
    let out = dpsnet(&["train", "--config", p(&config), "--synthetic", "3", "--out", p(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3, "{log}");
    assert!(lines[1].starts_with("0,1,") && lines[2].starts_with("0,2,"));
    assert_eq!(lines[2].split(',').count(), 7);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "epochs = lots\n").unwrap();
    let out = dpsnet(&["train", "--config", p(&config), "--synthetic", "2", "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("epochs"), "{}", stderr(&out));

    let out = dpsnet(&["synth", "--seed", "0", "--count", "1", "--size", "50x64", "--difficulty", "0.5", "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_dpsnet"))
        .args(["gradcheck", "--seed", "0"])
        .env("DPSNET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("DPSNET_THREADS"));

    // unknown flags are usage errors
    assert_eq!(code(&dpsnet(&["synth", "--colour", "red"])), 2);
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.conf");
    let out = dpsnet(&["train", "--config", p(&missing), "--synthetic", "2", "--out", p(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("missing.conf"));

    let ck = dir.path().join("old.bin");
    let mut bytes = b"DPSNETCK".to_vec();
    bytes.extend(99u32.to_le_bytes());
    std::fs::write(&ck, bytes).unwrap();
    let out = dpsnet(&["evaluate", "--checkpoint", p(&ck), "--data", p(dir.path()), "--csv", p(&dir.path().join("m.csv"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("version 99"), "{}", stderr(&out));
}

#[test]
fn gradcheck_single_seed_passes() {
    let out = Command::new(env!("CARGO_BIN_EXE_dpsnet"))
        .args(["gradcheck", "--seed", "1"])
        .env("DPSNET_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all gradient checks passed"));
}
