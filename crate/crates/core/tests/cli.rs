use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpf")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const SMALL: &str = r#"
epochs = 1
batch_size = 32

[benchmark]
num_qtypes = 2
answers_per_qtype = 3
v_in_dim = 4
n_train = 120
n_test = 60

[model]
embed_dim = 4
q_dim = 4
v_dim = 4
joint_dim = 4
hidden_dim = 4
qo_hidden_dim = 8
"#;

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = lpf(&[flag]);
        assert_eq!(code(&out), 0);
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&lpf(&[])), 1);
    assert_eq!(code(&lpf(&["frobnicate"])), 1);
    assert_eq!(code(&lpf(&["train", "--epochs", "many"])), 1);
}

#[test]
fn missing_and_corrupt_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpf(&["train", "--data", "/no/such/train.split", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/train.split"));

    let bad = dir.path().join("bad.split");
    fs::write(&bad, "not a split\n").unwrap();
    let out = lpf(&["train", "--data", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, "seed = 1\nepoch = 3\n").unwrap();
    let out = lpf(&["--config", cfg.to_str().unwrap(), "gen", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo.toml:2:"));
}

#[test]
fn pipeline_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let d = |p: &str| dir.path().join(p).display().to_string();
    let ok = |args: &[&str]| {
        let out = lpf(args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["--config", &cfg, "gen", "--seed", "7", "--out", &d("data")]);
    ok(&["--config", &cfg, "train", "--data", &d("data/train.split"), "--variant", "precomputed", "--out", &d("run")]);
    ok(&["eval", "--checkpoint", &d("run/model.ckpt"), "--split", &d("data/ood-test.split"), "--out", &d("e.json")]);
    ok(&["--config", &cfg, "sweep", "--data", &d("data"), "--gammas", "0,2", "--out", &d("s.json")]);
    ok(&["report", &d("e.json"), &d("s.json"), "--format", "csv", "--out", &d("all.csv")]);

    let csv = fs::read_to_string(d("all.csv")).unwrap();
    // Header, then (2 qtypes + summary) rows for each of 1 + 2·2 records.
    assert_eq!(csv.lines().count(), 1 + 3 * 5);
    assert!(csv.starts_with("label,variant,gamma,seed,split,qtype"));

    // A model trained for another benchmark shape is refused.
    let other = dir.path().join("other.toml");
    fs::write(&other, SMALL.replace("answers_per_qtype = 3", "answers_per_qtype = 4")).unwrap();
    ok(&["--config", other.to_str().unwrap(), "gen", "--out", &d("other")]);
    let out = lpf(&["eval", "--checkpoint", &d("run/model.ckpt"), "--split", &d("other/ood-test.split"), "--out", &d("x.json")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn variant_gamma_conflicts_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let d = |p: &str| dir.path().join(p).display().to_string();
    assert_eq!(code(&lpf(&["--config", &cfg, "gen", "--out", &d("data")])), 0);
    let (data, run) = (d("data/train.split"), d("run"));
    for args in [
        vec!["--variant", "ce", "--gamma", "2"],
        vec!["--variant", "lpf", "--gamma=-1"],
        vec!["--variant", "median"],
    ] {
        let mut full = vec!["--config", &cfg, "train", "--data", &data, "--out", &run];
        full.extend(args.iter().copied());
        assert_eq!(code(&lpf(&full)), 1, "{args:?}");
    }
}
