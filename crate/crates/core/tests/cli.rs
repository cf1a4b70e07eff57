use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn xmal(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = xmal(cwd, args);
    assert!(
        out.status.success(),
        "xmal {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(cwd: &Path, persons: &str, spp: &str) {
    ok(cwd, &["--out", "data", "synth", "--persons", persons, "--segments-per-person", spp]);
}

#[test]
fn synth_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", "3");
    let manifest = fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 6);
    let outcomes = fs::read_to_string(dir.path().join("data/outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().count(), 2);
}

#[test]
fn zero_epoch_checkpoint_matches_init() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "20", "3");
    let m = "data/manifest.jsonl";
    ok(d, &["--out", "tg", "build-targets", "--manifest", m, "--teacher", "data/teacher.bin"]);
    ok(d, &["--out", "tr", "train", "--manifest", m, "--targets", "tg/targets.bin", "--epochs", "0"]);
    ok(d, &["--out", "em", "embed", "--manifest", m, "--checkpoint", "tr/checkpoint", "--name", "zero.bin"]);
    ok(d, &["--out", "em", "embed", "--manifest", m, "--untrained", "--d-model", "32", "--name", "init.bin"]);
    let zero = fs::read(d.join("em/zero.bin")).unwrap();
    assert_eq!(zero, fs::read(d.join("em/init.bin")).unwrap());
    assert_eq!(
        fs::read_to_string(d.join("em/zero.ids")).unwrap().lines().count(),
        60
    );
}

#[test]
fn eval_identical_stores_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "30", "4");
    let m = "data/manifest.jsonl";
    ok(d, &["--out", "em", "embed", "--manifest", m, "--untrained", "--d-model", "32"]);
    let table = ok(
        d,
        &[
            "--out", "ev", "eval", "--manifest", m, "--outcomes", "data/outcomes.csv",
            "--store", "a=em/embeddings.bin", "--store", "b=em/embeddings.bin",
        ],
    );
    let rows: Vec<serde_json::Value> = fs::read_to_string(d.join("ev/report.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["r"], rows[1]["r"]);
    assert_eq!(rows[0]["mse"], rows[1]["mse"]);
    assert_eq!(table, fs::read_to_string(d.join("ev/report.txt")).unwrap());

    ok(d, &["--out", "ps", "extract-psych", "--manifest", m, "--lexicon", "data/lexicon.csv"]);
    ok(
        d,
        &[
            "--out", "an", "analyze", "--manifest", m, "--student", "em/embeddings.bin",
            "--teacher", "data/teacher.bin", "--psych", "ps/psych.bin", "--outcomes", "data/outcomes.csv",
        ],
    );
    for f in ["overlap_grid.txt", "overlap.json", "heatmap.csv", "ngrams_outcome_positive.tsv"] {
        assert!(d.join("an/analysis").join(f).is_file(), "{f} missing");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| xmal(d, args).status.code();

    assert_eq!(code(&["--bogus"]), Some(1));
    assert_eq!(code(&["--config", "nope.toml", "synth"]), Some(1));
    fs::write(d.join("bad.toml"), "[synth]\npersons = 0\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "synth"]), Some(1));

    synth(d, "3", "2");
    fs::write(d.join("broken.bin"), b"not a store").unwrap();
    let out = xmal(
        d,
        &["eval", "--manifest", "data/manifest.jsonl", "--outcomes", "data/outcomes.csv", "--store", "x=broken.bin"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "));
}
