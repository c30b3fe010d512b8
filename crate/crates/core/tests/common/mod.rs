#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_DATA: &[&str] = &[
    "--train-count", "40", "--valid-count", "20", "--test-count", "20", "--batch-size", "10", "--valid-evaluations", "2",
];

pub fn probout(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probout"))
        .current_dir(dir)
        .env_remove("PROBOUT_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = probout(dir, args);
    assert!(
        out.status.success(),
        "probout {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs every subcommand once in `dir`; returns the files they wrote.
pub fn run_all_subcommands(dir: &Path, seed: &str) -> Vec<PathBuf> {
    let s = ["--seed", seed, "--threads", "2"];
    let with = |rest: &[&str]| -> Vec<String> { s.iter().chain(rest).map(|v| v.to_string()).collect() };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(dir, &refs);
    };
    let mut train = with(&["train", "--epochs", "2", "--out", "m.ckpt", "--history", "history.csv"]);
    train.extend(TINY_DATA.iter().map(|v| v.to_string()));
    run(train);
    let mut maxout = with(&["train", "--epochs", "2", "--unit", "maxout", "--out", "maxout.ckpt"]);
    maxout.extend(TINY_DATA.iter().map(|v| v.to_string()));
    run(maxout);
    let mut retrain = with(&["retrain-full", "--from", "m.ckpt", "--out", "full.ckpt", "--history", "full.csv"]);
    retrain.extend(TINY_DATA.iter().map(|v| v.to_string()));
    run(retrain);
    run(with(&["eval", "--checkpoint", "m.ckpt", "--mode", "all", "-E", "3", "--out", "eval.csv"]));
    run(with(&["averaging-curve", "--checkpoint", "m.ckpt", "-E", "1,2,4", "--repeats", "3", "--out", "curve.csv"]));
    run(with(&[
        "probe-invariance", "--model", "maxout=maxout.ckpt", "--model", "probout=m.ckpt", "--images", "3",
        "--max-translation", "3", "--rotation-step", "90", "--out", "probe.csv",
    ]));
    run(with(&["export-filters", "--checkpoint", "m.ckpt", "--out", "filters.ppm"]));
    run(with(&["sample-check", "--z", "0.5,-1,2", "--lambda", "2", "-N", "2000", "--dropout", "--out", "sample.csv"]));
    let mut grid = with(&["lambda-grid", "--grid", "0.5,2", "--epochs", "1", "--out", "grid.csv"]);
    grid.extend(TINY_DATA.iter().map(|v| v.to_string()));
    run(grid);
    [
        "m.ckpt", "history.csv", "maxout.ckpt", "full.ckpt", "full.csv", "eval.csv", "curve.csv", "probe.csv",
        "filters.ppm", "sample.csv", "grid.csv",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}
