//! Exit-code and precedence contract of the command-line interface.

use std::fs;
use std::path::Path;
use std::process::Command;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_simdistill"))
        .args(args)
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn help_exits_zero_and_usage_errors_exit_one() {
    let help = run(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("annotate"), "help lists subcommands");

    let sub_help = run(&["gen", "--help"]);
    assert_eq!(sub_help.code, 0);
    assert!(sub_help.stdout.contains("--out"));

    assert_eq!(run(&["frobnicate"]).code, 1);
    assert_eq!(run(&["gen"]).code, 1, "missing required flag");
    assert_eq!(run(&["annotate", "--store", "x", "--targets", "y", "--out", "z", "--k", "not-a-number"]).code, 1);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.sxds");
    let out = run(&[
        "annotate",
        "--store", path(&missing),
        "--targets", path(&missing),
        "--out", path(&dir.path().join("a.jsonl")),
    ]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.starts_with("error:"), "stderr was: {}", out.stderr);
}

#[test]
fn build_names_the_unmatched_record() {
    let dir = tempfile::tempdir().unwrap();
    let embeddings = dir.path().join("embeddings.jsonl");
    let labels = dir.path().join("labels.jsonl");
    fs::write(
        &embeddings,
        concat!(
            "{\"id\":\"e1\",\"values\":[0.1,0.2]}\n",
            "{\"id\":\"e2\",\"values\":[0.3,0.4]}\n",
        ),
    )
    .unwrap();
    fs::write(&labels, "{\"id\":\"e1\",\"label\":0}\n").unwrap();

    let out = run(&[
        "build",
        "--embeddings", path(&embeddings),
        "--labels", path(&labels),
        "--out", path(&dir.path().join("store.sxds")),
    ]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("e2"), "stderr names the offender: {}", out.stderr);
}

#[test]
fn numeric_failures_exit_three() {
    // Zero student features drive a tanh encoder with zero biases to an
    // exactly-zero representation, which the similarity loss rejects.
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let dev = dir.path().join("dev.jsonl");
    let mut lines = String::new();
    for i in 0..8 {
        lines.push_str(&format!(
            "{{\"id\":\"t{i}\",\"teacher\":[{}.0,1.0],\"student\":[0.0,0.0],\"label\":{}}}\n",
            i + 1,
            i % 2
        ));
    }
    fs::write(&train, &lines).unwrap();
    fs::write(
        &dev,
        concat!(
            "{\"id\":\"d0\",\"teacher\":[1.0,2.0],\"student\":[0.5,0.1],\"label\":0}\n",
            "{\"id\":\"d1\",\"teacher\":[2.0,1.0],\"student\":[0.1,0.5],\"label\":1}\n",
        ),
    )
    .unwrap();

    let out = run(&[
        "train",
        "--train", path(&train),
        "--dev", path(&dev),
        "--out-dir", path(&dir.path().join("run")),
        "--classification-loss", "cross_entropy",
    ]);
    assert_eq!(out.code, 3, "stderr was: {}", out.stderr);
    assert!(out.stderr.starts_with("error:"));
}

#[test]
fn seed_flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, "{\"seed\": 7}\n").unwrap();

    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(run(&["gen", "--config", path(&config), "--seed", "42", "--out", path(&a)]).code, 0);
    assert_eq!(run(&["gen", "--seed", "42", "--out", path(&b)]).code, 0);
    assert_eq!(run(&["gen", "--config", path(&config), "--out", path(&c)]).code, 0);

    let read = |root: &Path| fs::read(root.join("source_train.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b), "flag wins over the config file");
    assert_ne!(read(&c), read(&b), "config seed applies when no flag is given");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, "{\"sede\": 7}\n").unwrap();
    let out = run(&["gen", "--config", path(&config), "--out", path(&dir.path().join("d"))]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("config"), "stderr was: {}", out.stderr);
}
