mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use xpl::ablate::{median, COMPONENT_CONFIGS};
use xpl::metrics::{binarize, iou};
use xpl::model::read_checkpoint;
use xpl::report::{parse_csv, EVAL_HEADER, TRAINING_HEADER};
use xpl::synth::{read_dataset, write_dataset, Dataset, GenConfig, Split};

fn xpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xpl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = xpl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny dataset plus tiny training config on disk.
fn fixture(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let data = dir.join("data.txt");
    fs::write(&data, write_dataset(&tiny_dataset(seed))).unwrap();
    let cfg = dir.join("train.cfg");
    fs::write(&cfg, tiny_train(0).to_kv().to_text()).unwrap();
    (data, cfg)
}

fn train(dir: &Path, data: &Path, cfg: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let out_dir = dir.join(out);
    let mut args = vec!["train", "--seed", "3", "--data", s(data), "--out-dir", s(&out_dir), "--config", s(cfg)];
    args.extend_from_slice(extra);
    ok(&args);
    out_dir
}

#[test]
fn generate_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    for p in [&a, &b] {
        ok(&["generate", "--seed", "7", "--out", s(p), "--set", "n_unlabeled=30", "--set", "n_test=12"]);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let ds = read_dataset(&text).unwrap();
    let bench = GenConfig::benchmark(7);
    assert_eq!(ds.count(Split::Labeled), bench.n_labeled);
    assert_eq!(ds.count(Split::Unlabeled), 30);
    assert_eq!(ds.count(Split::Test), 12);
    assert_eq!(ds.config.seed, 7);
    assert!(dir.path().join("a.txt.manifest").exists());

    ok(&["generate", "--seed", "8", "--out", s(&b), "--set", "n_unlabeled=30", "--set", "n_test=12"]);
    assert_ne!(text, fs::read_to_string(&b).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("x.txt")).to_string();
    assert_eq!(xpl(&["generate", "--out", &out]).status.code(), Some(2));
    assert_eq!(xpl(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(xpl(&["generate", "--seed", "1", "--out", &out, "--set", "height=0"]).status.code(), Some(2));
    assert_eq!(xpl(&["generate", "--seed", "1", "--out", &out, "--set", "bogus=1"]).status.code(), Some(2));
    assert!(!dir.path().join("x.txt").exists());
    let missing = dir.path().join("missing.txt");
    let code = xpl(&["train", "--seed", "1", "--data", s(&missing), "--out-dir", s(dir.path())]).status.code();
    assert_eq!(code, Some(1));
}

#[test]
fn train_writes_artifacts_and_evaluate_reproduces_the_last_row() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), 1);
    let out_dir = train(dir.path(), &data, &cfg, "run", &[]);

    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), TRAINING_HEADER);
    let (header, rows) = parse_csv(&csv);
    assert_eq!(rows.len(), 6);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows[0][col("mean_rho")], "nan");
    assert_eq!(rows[0][col("n_selected")], tiny_gen(1).n_labeled.to_string());

    let svg = fs::read_to_string(out_dir.join("ciou.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
    assert_eq!(lines.len(), 2);
    for l in lines {
        assert_eq!(l.attribute("points").unwrap().split_whitespace().count(), 6);
    }
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("train.seed"));
    assert!(manifest.contains("wall_clock_seconds"));

    let eval = dir.path().join("eval.csv");
    let ckpt = out_dir.join("checkpoint.txt");
    ok(&["evaluate", "--seed", "3", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&eval)]);
    let text = fs::read_to_string(&eval).unwrap();
    assert_eq!(text.lines().next().unwrap(), EVAL_HEADER);
    let (_, erows) = parse_csv(&text);
    assert_eq!(erows.len(), 4);
    let last = &rows[5];
    assert_eq!(erows[0][..4], ["test", "A", last[col("ciou_A")].as_str(), last[col("auc_A")].as_str()]);
    assert_eq!(erows[1][..4], ["test", "B", last[col("ciou_B")].as_str(), last[col("auc_B")].as_str()]);
    assert_eq!(erows[2][0], "openset_test");

    // rerun: byte-identical metrics
    let again = train(dir.path(), &data, &cfg, "run2", &[]);
    assert_eq!(csv, fs::read_to_string(again.join("metrics.csv")).unwrap());
}

#[test]
fn sup_only_rows_select_the_labeled_set() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), 2);
    let out_dir = train(dir.path(), &data, &cfg, "sup", &["--mode", "sup_only"]);
    let (header, rows) = parse_csv(&fs::read_to_string(out_dir.join("metrics.csv")).unwrap());
    let k = header.iter().position(|h| h == "n_selected").unwrap();
    let n_l = tiny_gen(2).n_labeled.to_string();
    assert!(rows.iter().all(|r| r[k] == n_l));
}

#[test]
fn evaluate_two_sample_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), 3);
    let out_dir = train(dir.path(), &data, &cfg, "run", &[]);
    let ckpt = out_dir.join("checkpoint.txt");

    // keep one labeled pair and two test pairs, no open-set split
    let full = tiny_dataset(3);
    let mut pairs = vec![full.split(Split::Labeled)[0].clone()];
    pairs.extend(full.split(Split::Test)[..2].iter().map(|p| (*p).clone()));
    for (i, p) in pairs.iter_mut().enumerate() {
        p.sample_id = i;
    }
    let small = Dataset {
        config: GenConfig { n_labeled: 1, n_unlabeled: 0, n_test: 2, n_openset_test: 0, ..full.config.clone() },
        partition: full.partition.clone(),
        pairs,
    };
    let small_path = dir.path().join("small.txt");
    fs::write(&small_path, write_dataset(&small)).unwrap();
    let eval = dir.path().join("small.csv");
    ok(&["evaluate", "--seed", "0", "--data", s(&small_path), "--checkpoint", s(&ckpt), "--out", s(&eval)]);
    let (_, rows) = parse_csv(&fs::read_to_string(&eval).unwrap());
    assert_eq!(rows.len(), 2, "no open-set rows without the split");

    let models = read_checkpoint(&fs::read_to_string(&ckpt).unwrap()).unwrap();
    for (row, model) in rows.iter().zip(&models) {
        let hits = small
            .split(Split::Test)
            .iter()
            .filter(|p| {
                let pred = binarize(&model.prediction_map(p).unwrap());
                iou(&pred, p.gt_mask.as_ref().unwrap()).unwrap().value >= 0.5
            })
            .count();
        assert_eq!(row[2], (50 * hits).to_string());
        assert_eq!(row[4], "2");
    }
}

#[test]
fn ablate_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), 4);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["ablate", "--seed", "1", "--seeds", "2", "--data", s(&data), "--config", s(&cfg), "--out-dir", s(&out)]);
        fs::read_to_string(out.join("ablate.csv")).unwrap()
    };
    let text = run("a");
    assert_eq!(text, run("b"));

    let (header, rows) = parse_csv(&text);
    let runs: Vec<_> = rows.iter().filter(|r| r[0] == "run").collect();
    assert_eq!(runs.len(), 24);
    for seed in ["1", "2"] {
        assert_eq!(runs.iter().filter(|r| r[2] == seed).count(), 12);
    }
    let ciou = header.iter().position(|h| h == "ciou_A").unwrap();
    let medians: Vec<_> = rows.iter().filter(|r| r[0] == "median").collect();
    assert_eq!(medians.len(), 12);
    for m in medians {
        let vals: Vec<f64> = runs.iter().filter(|r| r[1] == m[1]).map(|r| r[ciou].parse().unwrap()).collect();
        let got: f64 = m[ciou].parse().unwrap();
        assert!((median(&vals) - got).abs() <= 1e-4 * got.abs().max(1.0), "{}", m[1]);
    }

    let svg = fs::read_to_string(dir.path().join("a/ablate_ciou.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), COMPONENT_CONFIGS.len());
}
