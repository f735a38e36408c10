use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/attention_dump.json");

fn aom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aom")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: [&str; 14] = [
    "--synth_count", "8", "--synth_test_count", "4", "--synth_trc_count", "8", "--d_model", "8", "--n_heads", "2",
    "--d_ff", "16", "--seed", "3",
];

/// Synthesises a small run directory and returns its config path.
fn synth(dir: &Path) -> PathBuf {
    let mut args = vec!["synth", "--output", dir.to_str().unwrap()];
    args.extend(SMALL);
    let out = aom(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("aom.conf")
}

fn close(a: &Value, b: &Value, at: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= 1e-9 * (1.0 + y.abs()) {
                Ok(())
            } else {
                Err(format!("{at}: {x} vs {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).enumerate().try_for_each(|(i, (p, q))| close(p, q, &format!("{at}[{i}]")))
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => {
            x.iter().try_for_each(|(k, v)| close(v, y.get(k).ok_or(format!("{at}.{k} missing"))?, &format!("{at}.{k}")))
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{at}: {a} vs {b}")),
    }
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&aom(&["--help"])), 0);
    assert_eq!(code(&aom(&[])), 1);
    assert_eq!(code(&aom(&["frobnicate"])), 1);
    assert_eq!(code(&aom(&["train", "--no_such_key", "1"])), 1);
    assert_eq!(code(&aom(&["train", "--epochs", "many"])), 1);
    assert_eq!(code(&aom(&["train"])), 1, "train without train_path");
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let conf = synth(dir.path());
    let conf = conf.to_str().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let out = aom(&["train", "-c", conf, "--train_path", bad.to_str().unwrap(), "--no_trc_init"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let not_ckpt = dir.path().join("train.jsonl");
    assert_eq!(code(&aom(&["eval", "-c", conf, "--checkpoint", not_ckpt.to_str().unwrap()])), 2);
    assert_eq!(code(&aom(&["train", "-c", conf, "--dv", "5", "--no_trc_init"])), 2, "feature width mismatch");
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let conf = synth(dir.path());
    let out = aom(&["train", "-c", conf.to_str().unwrap(), "--epochs", "2", "--learning_rate", "1e300", "--no_trc_init"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes() {
    let out = aom(&["gradcheck"]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8_lossy(&out.stdout);
    for module in ["autodiff", "encoder", "a3m", "aggcn", "decoder", "pipeline"] {
        assert!(table.lines().any(|l| l.starts_with(module) && l.ends_with("PASS")), "{table}");
    }
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let conf = synth(dir.path());
    let conf = conf.to_str().unwrap();
    assert_eq!(code(&aom(&["pretrain-trc", "-c", conf, "--trc_epochs", "2"])), 0);
    assert!(dir.path().join("trc.ckpt").exists());
    assert_eq!(code(&aom(&["train", "-c", conf, "--epochs", "2", "--learning_rate", "0.001"])), 0);
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["dev"]["mabsa"]["f1"].is_number());

    let out = aom(&["eval", "-c", conf]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    for task in ["mabsa", "mate", "masc"] {
        let r = &report[task];
        let (tp, fp, fn_) = (r["tp"].as_u64().unwrap(), r["fp"].as_u64().unwrap(), r["fn"].as_u64().unwrap());
        assert!(tp + fp + fn_ > 0, "{task}");
    }

    let out = aom(&["predict", "-c", conf]);
    assert_eq!(code(&out), 0);
    let lines: Vec<Value> = String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["id"].is_string() && l["triples"].is_array()));
}

#[test]
fn identical_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let conf = synth(dir.path());
    let conf = conf.to_str().unwrap();
    let log = dir.path().join("run.jsonl");
    let ckpt = dir.path().join("run.ckpt");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = aom(&[
            "train", "-c", conf, "--epochs", "2", "--no_trc_init", "--metrics_log", log.to_str().unwrap(),
            "--checkpoint", ckpt.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        runs.push((std::fs::read(&log).unwrap(), std::fs::read(&ckpt).unwrap()));
    }
    assert!(runs[0] == runs[1]);
}

/// The golden dump comes from: synth with the small settings above, one
/// training epoch at learning rate 1e-3 without relation init, then
/// `dump-attention` on the first test example. Set `AOM_BLESS=1` to
/// rewrite it.
#[test]
fn attention_dump_matches_golden_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let conf = synth(dir.path());
    let conf = conf.to_str().unwrap();
    assert_eq!(code(&aom(&["train", "-c", conf, "--epochs", "1", "--learning_rate", "0.001", "--no_trc_init"])), 0);
    let out = aom(&["dump-attention", "-c", conf]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dump: Value = serde_json::from_slice(&out.stdout).unwrap();

    if std::env::var_os("AOM_BLESS").is_some() {
        std::fs::write(GOLDEN, serde_json::to_string_pretty(&dump).unwrap() + "\n").unwrap();
    }
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(GOLDEN).unwrap()).unwrap();
    close(&dump, &golden, "$").unwrap();

    assert_eq!(dump["format"], "aom-attention/1");
    let (m, n) = (dump["blocks"].as_array().unwrap().len(), dump["words"].as_array().unwrap().len());
    assert_eq!(dump["alpha"].as_array().unwrap().len(), m + n);
    assert_eq!(dump["dependency"]["word_word"].as_array().unwrap().len(), n);
    assert_eq!(dump["association"]["word_block"][0].as_array().unwrap().len(), m);

    let missing = aom(&["dump-attention", "-c", conf, "--example_id", "nope"]);
    assert_eq!(code(&missing), 1);
}
