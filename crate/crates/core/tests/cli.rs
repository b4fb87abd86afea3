//! The command-line binary end to end on a small toy corpus.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn envpred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_envpred")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Vec<Value> {
    let out = envpred(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn synth(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    let r = ok(&["synth-data", "--out", d, "--phrases", "20", "--frames", "140", "--seed", "3"]);
    assert_eq!(r[0]["kind"], "synth_data");
    dir.join("manifest.txt").to_str().unwrap().to_string()
}

fn last<'a>(records: &'a [Value], kind: &str) -> &'a Value {
    records.iter().rev().find(|r| r["kind"] == kind).unwrap()
}

#[test]
fn synth_data_is_a_pure_function_of_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("a"));
    synth(&tmp.path().join("b"));
    for name in ["manifest.txt", "singer.json", "phrase-0000.fsq", "phrase-0019.fsq"] {
        assert_eq!(fs::read(tmp.path().join("a").join(name)).unwrap(), fs::read(tmp.path().join("b").join(name)).unwrap());
    }
}

#[test]
fn train_twice_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"));
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let args = [
            "train", "--data", &data, "--model", "iter", "--updates", "4", "--eval-every", "2", "--n-iter", "2",
            "--batch", "4", "--horizon", "20", "--seed", "1", "--out", out.to_str().unwrap(),
        ];
        let r = ok(&args);
        assert_eq!(r[0]["checkpoints"], 2);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let names = ["run.jsonl", "model.json", "model.bin", "checkpoint-000002.json", "checkpoint-000004.bin"];
    for name in names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let log = fs::read_to_string(a.join("run.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
}

#[test]
fn every_named_setup_trains() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"));
    for model in ["bb1", "bb2", "mse", "cgm", "iter", "noise"] {
        let out = tmp.path().join(model);
        let r = ok(&[
            "train", "--data", &data, "--model", model, "--updates", "1", "--n-iter", "2", "--batch", "2", "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r[0]["final_loss"].is_array(), "{model}: {}", r[0]);
        assert!(out.join("model.json").exists());
    }
}

#[test]
fn generate_and_eval_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"));
    let out = tmp.path().join("run");
    ok(&["train", "--data", &data, "--model", "cgm", "--updates", "1", "--n-iter", "1", "--out", out.to_str().unwrap()]);
    let ckpt = out.join("model.json");
    let input = tmp.path().join("data").join("phrase-0001.fsq");
    let gen = |name: &str, seed: &str, tau: &str| {
        let path = tmp.path().join(name);
        let args = [
            "generate", "--checkpoint", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(), "--out",
            path.to_str().unwrap(), "--tau", tau, "--frames", "60", "--seed", seed,
        ];
        assert_eq!(ok(&args)[0]["frames"], 60);
        fs::read(path).unwrap()
    };
    assert_eq!(gen("g1.fsq", "1", "0"), gen("g2.fsq", "2", "0"));
    assert_ne!(gen("g3.fsq", "1", "1"), gen("g4.fsq", "2", "1"));

    let r = ok(&["eval", "--data", &data, "--checkpoint", ckpt.to_str().unwrap(), "--horizon", "30"]);
    let summary = last(&r, "eval");
    assert_eq!(summary["drift_db"].as_array().unwrap().len(), 31);
    assert_eq!(summary["drift_db"][0], 0.0);
}

#[test]
fn oracle_scores_near_zero_and_baseline_does_not() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"));
    let singer = tmp.path().join("data").join("singer.json");
    let oracle = ok(&["eval", "--data", &data, "--oracle", singer.to_str().unwrap(), "--horizon", "100"]);
    let o = last(&oracle, "eval");
    assert!(o["mse_db2"].as_f64().unwrap() < 1e-12);
    assert!(o["drift_at_horizon_db"].as_f64().unwrap() < 1e-6);
    let base = ok(&["eval", "--data", &data, "--repeat-previous", "--horizon", "100"]);
    assert!(last(&base, "eval")["mse_db2"].as_f64().unwrap() > 0.01);
}

#[test]
fn compare_and_mos_read_score_files() {
    let tmp = tempfile::tempdir().unwrap();
    let sym = tmp.path().join("sym.txt");
    fs::write(&sym, "# mirrored preferences\n-2\n2\n1\n-1\n0\n").unwrap();
    let r = ok(&["compare", sym.to_str().unwrap()]);
    assert_eq!(r[0]["p"], 0.5);
    assert_eq!(r[0]["label"], "sym");

    let mos = tmp.path().join("mos.txt");
    fs::write(&mos, "3\n3\n4\n4\n").unwrap();
    let r = ok(&["mos", mos.to_str().unwrap()]);
    assert_eq!(r[0]["mean"], 3.5);
    assert!((r[0]["half_width"].as_f64().unwrap() - 0.919).abs() < 5e-4);

    let flat = tmp.path().join("flat.txt");
    fs::write(&flat, "4\n4\n4\n").unwrap();
    let out = envpred(&["mos", flat.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn misuse_prints_usage_and_fails() {
    for args in [&["fly"][..], &["mos"], &["train", "--model", "bb3"], &["compare", "x", "--nope"]] {
        let out = envpred(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr).into_owned();
        assert!(err.contains("Usage") || err.contains("--help"), "{args:?}: {err}");
    }
    let help = envpred(&["--help"]);
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("synth-data"));
}
