mod common;

use std::fs;

use common::{ok, probout, run_all_subcommands, TINY_DATA};

#[test]
fn every_subcommand_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_all_subcommands(a.path(), "11");
    let second = run_all_subcommands(b.path(), "11");
    for (x, y) in first.iter().zip(&second) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
    let curve = fs::read_to_string(a.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("E,mean_error_percent,std_percent"));
    assert_eq!(curve.lines().count(), 4);
    let eval = fs::read_to_string(a.path().join("eval.csv")).unwrap();
    assert!(eval.contains("sample-average,3,") && eval.contains("max-at-test,1,") && eval.contains("prob-weight-at-test,1,"));
    let probe = fs::read_to_string(a.path().join("probe.csv")).unwrap();
    assert!(probe.lines().any(|l| l.starts_with("maxout,")) && probe.lines().any(|l| l.starts_with("probout,")));
    let best = probout::io::load_checkpoint(&a.path().join("m.ckpt")).unwrap().meta["history"]["best_epoch"]
        .as_u64()
        .unwrap() as usize;
    let history = fs::read_to_string(a.path().join("full.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + best);
    let grid = fs::read_to_string(a.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 4 * 2);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, args: &[&str], out: &str| {
        let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_probout"));
        cmd.current_dir(dir.path()).env_remove("PROBOUT_SEED");
        if let Some(s) = env {
            cmd.env("PROBOUT_SEED", s);
        }
        let mut all: Vec<&str> = args.to_vec();
        all.extend(["--out", out]);
        assert!(cmd.args(&all).output().unwrap().status.success());
        fs::read(dir.path().join(out)).unwrap()
    };
    let args = ["sample-check", "--z", "0,1", "-N", "1000"];
    let from_env = run(Some("5"), &args, "a.csv");
    let mut flagged = vec!["--seed", "5"];
    flagged.extend(args);
    assert_eq!(from_env, run(None, &flagged, "b.csv"));
    assert_ne!(from_env, run(Some("6"), &args, "c.csv"));
}

#[test]
fn eval_modes_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = vec!["train", "--epochs", "1", "--out", "m.ckpt"];
    train.extend(TINY_DATA);
    ok(dir.path(), &train);
    let max = ok(dir.path(), &["eval", "--checkpoint", "m.ckpt", "--mode", "max"]);
    let sample = ok(dir.path(), &["--seed", "3", "eval", "--checkpoint", "m.ckpt", "--mode", "sample", "-E", "1"]);
    for out in [max, sample] {
        assert!(String::from_utf8_lossy(&out.stdout).contains("error="));
    }
}

#[test]
fn failures_exit_nonzero_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = probout(d, &["train", "--cifar-dir", "no-such-dir", "--out", "m.ckpt", "--history", "h.csv"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing file"));
    assert!(!d.join("m.ckpt").exists() && !d.join("h.csv").exists());

    assert!(!probout(d, &["frobnicate"]).status.success());

    fs::write(d.join("bad.json"), "{ not json").unwrap();
    let bad = probout(d, &["train", "--model-config", "bad.json", "--out", "m.ckpt"]);
    assert!(!bad.status.success());
    assert!(!d.join("m.ckpt").exists());

    let no_ckpt = probout(d, &["eval", "--checkpoint", "nothing.ckpt", "--out", "e.csv"]);
    assert!(!no_ckpt.status.success());
    assert!(!d.join("e.csv").exists());

    // A bad output directory is detected before anything is written.
    let mut train = vec!["train", "--epochs", "1", "--out", "m.ckpt", "--history", "no-dir/h.csv"];
    train.extend(TINY_DATA);
    assert!(!probout(d, &train).status.success());
    assert!(!d.join("m.ckpt").exists());
    assert_eq!(fs::read_dir(d).unwrap().count(), 1);
}

#[test]
fn model_config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = probout::network::ModelConfig::desk_scale(4, |_| probout::network::UnitType::Maxout);
    fs::write(dir.path().join("model.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let mut train = vec!["train", "--epochs", "1", "--model-config", "model.json", "--out", "m.ckpt"];
    train.extend(TINY_DATA);
    ok(dir.path(), &train);
    let ck = probout::io::load_checkpoint(&dir.path().join("m.ckpt")).unwrap();
    assert_eq!(ck.config, cfg);
}
