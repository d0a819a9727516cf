mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::enumeration_map;
use hebb_cbir::data::cifar::write_archive;
use hebb_cbir::data::synthetic::{generate, SyntheticSpec};
use hebb_cbir::data::CifarKind;
use hebb_cbir::persistence::load_features;
use hebb_cbir::retrieval::evaluate_stores;
use tempfile::TempDir;

const TINY_NET: &str = "conv(4,5,1,2) relu maxpool(4,4) | conv(6,3,1,1) relu maxpool(2,2) | flatten dense(10)";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hebb-cbir"));
    c.env_remove("HEBB_CBIR_DATA");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// CIFAR-10 layout archive of synthetic images.
fn archive(dir: &Path, per_class: usize) -> PathBuf {
    let root = dir.join("cifar");
    let train = generate(&SyntheticSpec {
        per_class,
        seed: 1,
        ..Default::default()
    });
    let test = generate(&SyntheticSpec {
        per_class: per_class.div_ceil(4),
        seed: 2,
        ..Default::default()
    });
    write_archive(&root, CifarKind::Cifar10, &train, &test).unwrap();
    root
}

fn synthetic<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--dataset", "synthetic", "--synthetic-per-class", "8", "--layers", TINY_NET];
    v.extend_from_slice(extra);
    v
}

#[test]
fn missing_data_dir_is_a_usage_error() {
    let out = run(&["pretrain", "--data-dir", "/nonexistent/cifar", "--out", "/tmp/x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["pretrain", "--out", "/tmp/x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_regime_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("f.ckpt");
    let mut args = vec!["finetune", "--regime", "7", "--layer", "1", "--out", p(&out_path)];
    args.extend(synthetic(&[]));
    assert_eq!(run(&args).status.code(), Some(2));
    assert!(!out_path.exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
}

#[test]
fn pretrain_is_deterministic_and_logs_each_layer() {
    let dir = TempDir::new().unwrap();
    let go = |name: &str| {
        let ckpt = dir.path().join(format!("{name}.ckpt"));
        let metrics = dir.path().join(format!("{name}.csv"));
        let mut args = vec!["pretrain", "--hpca-epochs", "1", "--out", p(&ckpt), "--metrics", p(&metrics)];
        args.extend(synthetic(&["--seed", "3"]));
        ok(&args);
        (std::fs::read(&ckpt).unwrap(), std::fs::read_to_string(&metrics).unwrap())
    };
    let (a, ma) = go("a");
    let (b, mb) = go("b");
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let rows: Vec<&str> = ma.lines().skip(1).filter(|l| l.contains("repr_error")).collect();
    assert_eq!(rows.len(), 2, "{ma}");
    assert!(dir.path().join("a.run").exists());
}

#[test]
fn finetune_logs_best_epoch() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("f.ckpt");
    let metrics = dir.path().join("f.csv");
    let mut args = vec!["finetune", "--regime", "100", "--layer", "2", "--epochs", "2"];
    args.extend(["--out", p(&ckpt), "--metrics", p(&metrics)]);
    args.extend(synthetic(&[]));
    ok(&args);
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.lines().any(|l| l.contains(",best_epoch,")), "{text}");
    assert_eq!(text.lines().filter(|l| l.contains(",lr,")).count(), 2);
}

#[test]
fn sweep_interval_only_with_several_seeds() {
    let sweep = |seeds: &str| {
        let mut args = vec!["sweep", "--regime", "100", "--epochs", "1", "--seeds", seeds];
        args.extend(synthetic(&[]));
        ok(&args)
    };
    let one = sweep("1");
    assert!(!one.contains('±'), "{one}");
    let two = sweep("2");
    assert!(two.contains('±'), "{two}");
}

/// Finetunes a tiny network on an archive and extracts the test split.
fn trained_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let data = archive(dir, 6);
    let ckpt = dir.join("net.ckpt");
    ok(&[
        "finetune", "--data-dir", p(&data), "--layers", TINY_NET, "--regime", "100", "--layer", "2",
        "--epochs", "1", "--out", p(&ckpt),
    ]);
    let feat = dir.join("test.feat");
    ok(&["extract", "--data-dir", p(&data), "--ckpt", p(&ckpt), "--split", "test", "--out", p(&feat)]);
    (data, ckpt, feat)
}

#[test]
fn query_finds_the_identical_image_first() {
    let dir = TempDir::new().unwrap();
    let (data, ckpt, feat) = trained_fixture(dir.path());
    let record = std::fs::read(data.join("test_batch.bin")).unwrap();
    let image = dir.path().join("q.bin");
    std::fs::write(&image, &record[..3073]).unwrap();
    let out = ok(&["query", "--feat", p(&feat), "--ckpt", p(&ckpt), "--image", p(&image), "--topk", "3"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4, "{out}");
    let first: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(first[0], "1");
    assert_eq!(first[1], "0");
    assert_eq!(first[2], record[0].to_string());
    assert_eq!(first[3].parse::<f64>().unwrap(), 0.0);

    let many = run(&["query", "--feat", p(&feat), "--ckpt", p(&ckpt), "--image", p(&image), "--topk", "1000"]);
    assert!(many.status.success());
    assert!(String::from_utf8_lossy(&many.stderr).contains("clamped"));
    let n = load_features(&feat).unwrap().len();
    assert_eq!(String::from_utf8_lossy(&many.stdout).lines().count(), n + 1);
}

#[test]
fn eval_map_matches_oracle() {
    let dir = TempDir::new().unwrap();
    let (data, ckpt, queries) = trained_fixture(dir.path());
    let db = dir.path().join("db.feat");
    ok(&["extract", "--data-dir", p(&data), "--ckpt", p(&ckpt), "--out", p(&db)]);
    let out = ok(&["eval-map", "--feat", p(&db), "--queries", p(&queries)]);
    let reported: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();

    let dbs = load_features(&db).unwrap();
    let qs = load_features(&queries).unwrap();
    let rows = |s: &hebb_cbir::retrieval::FeatureStore| -> Vec<Vec<f64>> {
        (0..s.len()).map(|i| s.row(i).iter().map(|&v| v as f64).collect()).collect()
    };
    let want = enumeration_map(&rows(&dbs), dbs.labels(), &rows(&qs), qs.labels());
    assert!((reported - want).abs() < 1e-9, "{reported} vs {want}");
    assert_eq!(reported, evaluate_stores(&dbs, &qs).unwrap().map);

    let direct = ok(&["eval-map", "--data-dir", p(&data), "--ckpt", p(&ckpt)]);
    let direct: f64 = direct.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((direct - want).abs() < 1e-9);
}

#[test]
fn config_replay_reproduces_checkpoint() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("a.ckpt");
    let mut args = vec!["pretrain", "--hpca-epochs", "1", "--hpca-eta", "0.002", "--out", p(&first)];
    args.extend(synthetic(&["--seed", "9"]));
    ok(&args);
    let replay = dir.path().join("b.ckpt");
    let cfg = first.with_extension("run");
    ok(&["pretrain", "--config", p(&cfg), "--out", p(&replay)]);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&replay).unwrap());
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("hpca-eta=0.002"), "{text}");
}

#[test]
fn stop_and_resume_match_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let base = synthetic(&["--regime", "100", "--layer", "1", "--epochs", "4", "--seed", "5"]);
    let full = dir.path().join("full.ckpt");
    let full_csv = dir.path().join("full.csv");
    let mut args = vec!["finetune", "--out", p(&full), "--metrics", p(&full_csv)];
    args.extend(base.iter().copied());
    ok(&args);

    let part = dir.path().join("part.ckpt");
    let resumed = dir.path().join("resumed.ckpt");
    let csv = dir.path().join("split.csv");
    let mut args = vec!["finetune", "--stop-after", "2", "--out", p(&part), "--metrics", p(&csv)];
    args.extend(base.iter().copied());
    ok(&args);
    let mut args = vec!["finetune", "--resume", p(&part), "--out", p(&resumed), "--metrics", p(&csv)];
    args.extend(base.iter().copied());
    ok(&args);

    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&resumed).unwrap());
    assert_eq!(
        std::fs::read_to_string(&full_csv).unwrap(),
        std::fs::read_to_string(&csv).unwrap()
    );
}

#[test]
fn reproduce_smoke_prints_full_grid() {
    let dir = TempDir::new().unwrap();
    let data = archive(dir.path(), 10);
    let table = dir.path().join("table.txt");
    let out = ok(&[
        "reproduce", "--table", "cifar10", "--data-dir", p(&data), "--train-limit", "80", "--test-limit", "20",
        "--out", p(&table),
    ]);
    let written = std::fs::read_to_string(&table).unwrap();
    assert!(out.ends_with(&written));
    let rows: Vec<&str> = written.lines().skip(1).collect();
    assert_eq!(rows.len(), 16, "{written}");
    assert_eq!(rows.iter().filter(|r| r.contains("HPCA")).count(), 8);
}

#[test]
fn reproduce_full_warns_before_failing_on_missing_data() {
    let out = run(&["reproduce", "--table", "cifar10", "--scale", "full", "--data-dir", "/nonexistent/cifar"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("warning"), "{err}");
    assert!(err.find("warning") < err.find("error"));
}
