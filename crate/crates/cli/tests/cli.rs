use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geohead::features::record_to_json;
use geohead::synthetic::{generate, SyntheticConfig};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geohead"));
    cmd.env_remove("GEOHEAD_DATA_DIR").env("RUST_LOG", "error");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_corpus(dir: &Path, name: &str, cfg: SyntheticConfig) -> PathBuf {
    let path = dir.join(name);
    let lines: Vec<String> = generate(&cfg).unwrap().iter().map(record_to_json).collect();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn corpus(dir: &Path) -> PathBuf {
    write_corpus(dir, "tweets.jsonl", SyntheticConfig { samples: 600, ..SyntheticConfig::default() })
}

const FAST: &[&str] = &["--embedding-dim", "64", "--seed", "3"];

fn train(dir: &Path, input: &Path, extra: &[&str], name: &str) -> PathBuf {
    let ckpt = dir.join(name);
    let mut args: Vec<&str> = if extra.contains(&"--seed") { vec!["--embedding-dim", "64"] } else { FAST.to_vec() };
    args.extend_from_slice(extra);
    args.extend_from_slice(&["train", "--input", s(input), "--checkpoint", s(&ckpt), "--lr-max", "1e-2", "--lr-min", "1e-4"]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ckpt
}

fn json_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["train", "--bogus"])), 1);
    assert_eq!(code(&run(&["--kind", "xyz", "evaluate", "--input", "a", "--checkpoint", "b"])), 1);
    assert_eq!(code(&run(&["--kind", "gsop", "--outcomes", "3", "evaluate", "--input", "a", "--checkpoint", "b"])), 1);
    assert_eq!(code(&run(&["--alpha", "1.5", "evaluate", "--input", "a", "--checkpoint", "b"])), 1);
    assert_eq!(code(&run(&["--mf", "GEO_ONLY,nope", "evaluate", "--input", "a", "--checkpoint", "b"])), 1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seeed = 4\n").unwrap();
    let out = run(&["--config", s(&cfg), "evaluate", "--input", "a", "--checkpoint", "b"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_files_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let input = corpus(dir.path());
    let missing = dir.path().join("nope.ckpt");
    assert_eq!(code(&run(&["evaluate", "--input", s(&input), "--checkpoint", s(&missing)])), 2);
    assert_eq!(code(&run(&["ingest", "--input", s(&missing), "--output", s(&dir.path().join("o.jsonl"))])), 2);
}

#[test]
fn full_pipeline() {
    let dir = TempDir::new().unwrap();
    let raw = corpus(dir.path());
    let clean = dir.path().join("clean.jsonl");
    let out = run(&["ingest", "--input", s(&raw), "--output", s(&clean)]);
    assert_eq!(code(&out), 0);
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("clean.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["written"], 600);
    assert_eq!(meta["config"]["subcommand"], "ingest");

    let log = dir.path().join("loss.csv");
    let ckpt = dir.path().join("m.ckpt");
    let mut args: Vec<&str> = FAST.to_vec();
    args.extend_from_slice(&["--mf", "GEO_ONLY", "train", "--input", s(&clean), "--checkpoint", s(&ckpt)]);
    args.extend_from_slice(&["--loss-log", s(&log), "--lr-max", "1e-2", "--lr-min", "1e-4"]);
    assert_eq!(code(&run(&args)), 0);
    let log_text = fs::read_to_string(&log).unwrap();
    let mut lines = log_text.lines();
    assert!(lines.next().unwrap().starts_with("# config: {"));
    assert_eq!(lines.next().unwrap(), "step,kf_spat,mf_spat,prob,total");
    assert!(lines.next().unwrap().split(',').count() == 5);
    let run_meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.ckpt.run.json")).unwrap()).unwrap();
    assert_eq!(run_meta["config"]["mf"][0], "GEO_ONLY");

    let report = dir.path().join("report.json");
    let out = run(&["evaluate", "--input", s(&clean), "--checkpoint", s(&ckpt), "--output", s(&report), "--group-by", "country"]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("PMOP-5 NON_GEO"));
    assert!(table.contains("Japan"));
    let report: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["overall"]["n_samples"], 600);
    assert!(report["overall"]["cov"].as_f64().unwrap() > 0.0);
    assert_eq!(report["config"]["kind"], "pmop");
    assert_eq!(report["groups"].as_array().unwrap().len(), 5);

    let inputs = dir.path().join("inputs.txt");
    let first = fs::read_to_string(&clean).unwrap().lines().next().unwrap().to_string();
    fs::write(&inputs, format!("{first}\n\nbondi arvo barbie\n{{not json\n")).unwrap();
    let preds = dir.path().join("preds.jsonl");
    let plot = dir.path().join("plot");
    let out =
        run(&["predict", "--checkpoint", s(&ckpt), "--input", s(&inputs), "--output", s(&preds), "--plot", s(&plot)]);
    assert_eq!(code(&out), 0);
    let records = json_lines(&preds);
    let kinds: Vec<&str> = records.iter().map(|r| r["record"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["header", "prediction", "error", "prediction", "error"]);
    assert_eq!(records[0]["config"]["embedding_dim"], 64);
    let peaks = records[1]["peaks"].as_array().unwrap();
    assert_eq!(peaks.len(), 5);
    let weights: Vec<f64> = peaks.iter().map(|p| p["weight"].as_f64().unwrap()).collect();
    assert!(weights.windows(2).all(|w| w[0] >= w[1]));
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(plot.join("peaks.csv").exists() && plot.join("density_001.csv").exists());

    let users = dir.path().join("users.jsonl");
    let out = run(&["--top-k", "2", "user-locate", "--input", s(&preds), "--output", s(&users)]);
    assert_eq!(code(&out), 0);
    let located = json_lines(&users);
    assert_eq!(located[0]["record"], "header");
    let user = located.iter().find(|r| r["record"] == "user").unwrap();
    assert!(user["points"].as_array().unwrap().len() <= 2);

    let direct = dir.path().join("direct.jsonl");
    let out = run(&["user-locate", "--input", s(&clean), "--checkpoint", s(&ckpt), "--output", s(&direct)]);
    assert_eq!(code(&out), 0);
    assert!(json_lines(&direct).iter().filter(|r| r["record"] == "user").count() > 100);
}

#[test]
fn geospatial_report_uses_dashes() {
    let dir = TempDir::new().unwrap();
    let input = corpus(dir.path());
    let log = dir.path().join("loss.csv");
    let ckpt = dir.path().join("g.ckpt");
    let mut args: Vec<&str> = FAST.to_vec();
    args.extend_from_slice(&["--kind", "gsop", "train", "--input", s(&input), "--checkpoint", s(&ckpt), "--loss-log", s(&log)]);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().nth(1).unwrap(), "step,kf_spat,total");

    let gmop = train(dir.path(), &input, &["--kind", "gmop", "--outcomes", "3"], "gm.ckpt");
    let out = run(&["evaluate", "--input", s(&input), "--checkpoint", s(&gmop)]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("GMOP-3 NON_GEO"));
    assert!(row.contains(" - "));
    let out = run(&["user-locate", "--input", s(&input), "--checkpoint", s(&gmop)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn place_features_are_refused_at_evaluation() {
    let dir = TempDir::new().unwrap();
    let input = corpus(dir.path());
    let ckpt = train(dir.path(), &input, &["--kind", "psop"], "p.ckpt");
    for vf in ["GEO_ONLY", "ALL"] {
        let out = run(&["--vf", vf, "evaluate", "--input", s(&input), "--checkpoint", s(&ckpt)]);
        assert_eq!(code(&out), 1, "{vf}");
    }
    let out = run(&["--vf", "TEXT_ONLY", "evaluate", "--input", s(&input), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8(out.stdout).unwrap().contains("PSOP TEXT_ONLY"));
}

#[test]
fn place_minor_feature_without_place_data_fails_before_training() {
    let dir = TempDir::new().unwrap();
    let input = write_corpus(
        dir.path(),
        "noplace.jsonl",
        SyntheticConfig { samples: 200, place_probability: 0.0, ..SyntheticConfig::default() },
    );
    let ckpt = dir.path().join("m.ckpt");
    let out = run(&["--mf", "GEO_ONLY", "train", "--input", s(&input), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 1);
    assert!(!ckpt.exists());
}

#[test]
fn too_many_malformed_lines_fail() {
    let dir = TempDir::new().unwrap();
    let input = corpus(dir.path());
    let mut text = fs::read_to_string(&input).unwrap();
    for _ in 0..100 {
        text.push_str("{broken\n");
    }
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, text).unwrap();
    let out = run(&["ingest", "--input", s(&bad), "--output", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));
}

#[test]
fn training_and_evaluation_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let input = corpus(dir.path());
    let a = train(dir.path(), &input, &[], "a.ckpt");
    let b = train(dir.path(), &input, &[], "b.ckpt");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ra = dir.path().join("ra.json");
    let rb = dir.path().join("rb.json");
    for (ckpt, report) in [(&a, &ra), (&b, &rb)] {
        let out = run(&["--seed", "3", "evaluate", "--input", s(&input), "--checkpoint", s(ckpt), "--output", s(report)]);
        assert_eq!(code(&out), 0);
    }
    let strip = |p: &Path| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["config"]["paths"] = Value::Null;
        v
    };
    assert_eq!(strip(&ra), strip(&rb));
    let other = train(dir.path(), &input, &["--seed", "4"], "c.ckpt");
    assert_ne!(fs::read(&a).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let input = corpus(dir.path());
    let ckpt = train(dir.path(), &input, &[], "m.ckpt");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "alpha = 0.8\ncae_samples = 20\nseed = 11\n").unwrap();
    let report = dir.path().join("r.json");
    let out = run(&[
        "--config", s(&cfg), "--seed", "12", "evaluate", "--input", s(&input), "--checkpoint", s(&ckpt), "--output",
        s(&report),
    ]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["config"]["alpha"], 0.8);
    assert_eq!(report["config"]["cae_samples"], 20);
    assert_eq!(report["config"]["seed"], 12);
}

#[test]
fn relative_paths_resolve_against_data_dir() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    let out = bin()
        .env("GEOHEAD_DATA_DIR", dir.path())
        .args(["ingest", "--input", "tweets.jsonl", "--output", "out/clean.jsonl"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("out/clean.jsonl").exists());
}

#[test]
fn imported_embeddings_round_trip() {
    let dir = TempDir::new().unwrap();
    let raw = corpus(dir.path());
    let clean = dir.path().join("clean.jsonl");
    let emb = dir.path().join("emb.csv");
    let mut args: Vec<&str> = FAST.to_vec();
    args.extend_from_slice(&["ingest", "--input", s(&raw), "--output", s(&clean), "--embeddings", s(&emb)]);
    assert_eq!(code(&run(&args)), 0);

    let ckpt = dir.path().join("imp.ckpt");
    let mut args: Vec<&str> = FAST.to_vec();
    args.extend_from_slice(&["train", "--input", s(&clean), "--checkpoint", s(&ckpt), "--embeddings", s(&emb)]);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(code(&run(&["evaluate", "--input", s(&clean), "--checkpoint", s(&ckpt)])), 1);
    let out = run(&["evaluate", "--input", s(&clean), "--checkpoint", s(&ckpt), "--embeddings", s(&emb)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
