use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use acta_cli::commands::RunConfig;
use acta_cli::dataset::GeneratorConfig;
use acta_core::model::{ConvSpec, Curriculum, ModelConfig, Optimizer, TrainConfig};
use acta_core::transfer::ModelCheckpoint;
use serde_json::Value;

fn acta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acta"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = acta(args);
    assert!(
        out.status.success(),
        "acta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn small_dataset(dir: &Path, seed: &str) {
    ok(&["generate", "--out", s(dir), "--pages", "12", "--seed", seed]);
}

fn json_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn exit_codes() {
    assert_eq!(acta(&["--help"]).status.code(), Some(0));
    assert_eq!(acta(&["--version"]).status.code(), Some(0));
    assert_eq!(acta(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(acta(&["generate"]).status.code(), Some(1));
    assert_eq!(acta(&["annotate"]).status.code(), Some(1));
    assert_eq!(
        acta(&["annotate", "--dataset", "/nonexistent/acta"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        acta(&["eval", "--strategy", "phonetic", "--dataset", "x"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn generate_is_deterministic_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    small_dataset(&a, "5");
    small_dataset(&b, "5");
    small_dataset(&c, "6");
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));

    let refused = acta(&["generate", "--out", s(&a), "--pages", "12"]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    ok(&[
        "generate",
        "--out",
        s(&a),
        "--pages",
        "12",
        "--seed",
        "6",
        "--force",
    ]);
    assert_eq!(tree(&a), tree(&c));
}

#[test]
fn default_scale_split_and_writers() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let out = ok(&["generate", "--out", s(&d)]);
    assert!(out.contains("161 train, 20 valid, 20 test"), "{out}");
    let m: Value =
        serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["train"].as_array().unwrap().len(), 161);
    let writers = GeneratorConfig::default().writers;
    assert!(writers >= 12);
    let mut seen = vec![0usize; writers as usize];
    for l in json_lines(&d.join("layouts.jsonl")) {
        seen[l["writer"].as_u64().unwrap() as usize] += 1;
    }
    assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
}

#[test]
fn annotation_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    ok(&[
        "generate",
        "--out",
        s(&d),
        "--pages",
        "40",
        "--abbreviation-probability",
        "0.5",
        "--verbose-date-fraction",
        "0.8",
    ]);
    let mut files = BTreeMap::new();
    for st in ["normalized", "diplomatic", "hybrid"] {
        let path = ok(&["annotate", "--dataset", s(&d), "--strategy", st]);
        files.insert(st, json_lines(Path::new(path.trim())));
    }
    let field_map = |v: &Value| -> BTreeMap<String, String> {
        v["fields"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| {
                (
                    p[0].as_str().unwrap().to_string(),
                    p[1].as_str().unwrap().to_string(),
                )
            })
            .collect()
    };
    let mut diplomatic_names_differ = false;
    for i in 0..40 {
        let (n, dp, h) = (
            &files["normalized"][i],
            &files["diplomatic"][i],
            &files["hybrid"][i],
        );
        assert_eq!(n["image"], dp["image"]);
        assert_eq!(n["image"], h["image"]);
        let (nf, df, hf) = (field_map(n), field_map(dp), field_map(h));
        assert_eq!(nf.keys().collect::<Vec<_>>(), df.keys().collect::<Vec<_>>());
        for (k, v) in &hf {
            let name = k.ends_with("_name");
            assert_eq!(v, if name { &df[k] } else { &nf[k] }, "page {i} field {k}");
            diplomatic_names_differ |= name && nf[k] != df[k];
        }
        for k in ["date_field_1", "date_field_2"] {
            assert!(!nf[k].contains("dos mil"), "page {i}: {}", nf[k]);
        }
    }
    assert!(diplomatic_names_differ);
}

#[test]
fn perfect_predictions_score_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    small_dataset(&d, "2");
    let ann = ok(&["annotate", "--dataset", s(&d), "--strategy", "normalized"]);
    let lines = json_lines(Path::new(ann.trim()));
    let preds: Vec<String> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            serde_json::json!({"page": i, "image": l["image"], "fields": l["fields"], "defects": [], "skew": 0.0})
                .to_string()
        })
        .collect();
    let p = tmp.path().join("preds.jsonl");
    fs::write(&p, preds.join("\n") + "\n").unwrap();
    let csv = ok(&[
        "eval",
        "--predictions",
        s(&p),
        "--dataset",
        s(&d),
        "--strategy",
        "normalized",
        "--format",
        "csv",
    ]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 11);
    for row in &rows[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        for c in &cells[1..5] {
            assert!(*c == "0.00" || *c == "-", "{row}");
        }
    }
    let text = ok(&[
        "eval",
        "--predictions",
        s(&p),
        "--dataset",
        s(&d),
        "--strategy",
        "normalized",
    ]);
    assert!(text.contains("pages: 12"), "{text}");
}

fn tiny_config(dir: &Path, seed: u64) -> PathBuf {
    let cfg = RunConfig {
        seed,
        model: Some(ModelConfig {
            conv: vec![
                ConvSpec {
                    channels: 8,
                    kernel: 3,
                    stride_y: 4,
                    stride_x: 4,
                },
                ConvSpec {
                    channels: 16,
                    kernel: 3,
                    stride_y: 2,
                    stride_x: 2,
                },
            ],
            decoder_layers: 1,
            model_dim: 16,
            attention_heads: 2,
            ffn_dim: 32,
            dropout: 0.1,
            max_sequence_length: 160,
            label_noise_prob: 0.1,
            input_height: 64,
        }),
        train: Some(TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            curriculum: Curriculum {
                initial: 0.5,
                minimum: 0.0,
                decay_epochs: 2,
            },
            seed,
            augment: None,
            grad_clip: Some(5.0),
            patience: None,
        }),
        generator: GeneratorConfig {
            page_height: 256,
            ..GeneratorConfig::default()
        },
        ..RunConfig::default()
    };
    let p = dir.join("run.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn train_infer_eval_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = tiny_config(t, 3);
    let d = t.join("d");
    ok(&[
        "generate",
        "--config",
        s(&cfg),
        "--out",
        s(&d),
        "--pages",
        "12",
    ]);

    let (a, b, c) = (t.join("a"), t.join("b"), t.join("c"));
    for out in [&a, &b] {
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--dataset",
            s(&d),
            "--out",
            s(out),
            "--strategy",
            "diplomatic",
        ]);
    }
    assert_eq!(
        fs::read(a.join("model.acta")).unwrap(),
        fs::read(b.join("model.acta")).unwrap()
    );
    // identical apart from the wall-clock column
    let without_wall = |p: PathBuf| -> Vec<String> {
        let text = fs::read_to_string(p).unwrap();
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(
        without_wall(a.join("train_log.csv")),
        without_wall(b.join("train_log.csv"))
    );
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,valid_cer"));
    assert_eq!(log.lines().count(), 3);

    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&d),
        "--out",
        s(&c),
        "--strategy",
        "diplomatic",
        "--donor",
        s(&a.join("model.acta")),
    ]);
    let scratch = ModelCheckpoint::load(a.join("model.acta")).unwrap();
    let adapted = ModelCheckpoint::load(c.join("model.acta")).unwrap();
    assert_eq!(scratch.meta.note.as_deref(), Some("init: scratch"));
    assert_eq!(
        adapted.meta.note.as_deref(),
        Some("init: adapted from model.acta")
    );
    assert_eq!(scratch.config, adapted.config);
    assert_eq!(scratch.dictionary, adapted.dictionary);
    assert_eq!(adapted.meta.strategy.as_deref(), Some("diplomatic"));

    let ckpt = a.join("model.acta");
    let preds = t.join("preds.jsonl");
    ok(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&d),
        "--out",
        s(&preds),
    ]);
    let lines = json_lines(&preds);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(lines.len(), manifest["test"].as_array().unwrap().len());
    for l in &lines {
        assert!(l["skew"].is_f64() && l["defects"].is_array() && l["fields"].is_array());
    }

    let direct = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&d),
        "--format",
        "csv",
    ]);
    let via_file = ok(&[
        "eval",
        "--predictions",
        s(&preds),
        "--dataset",
        s(&d),
        "--strategy",
        "diplomatic",
        "--format",
        "csv",
    ]);
    assert_eq!(direct, via_file);

    let report = t.join("reports/cmp.txt");
    ok(&[
        "compare",
        "--checkpoint",
        s(&ckpt),
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&d),
        "--out",
        s(&report),
    ]);
    let table = fs::read_to_string(&report).unwrap();
    for row in table.lines().skip(1) {
        let groups: Vec<&str> = row.split(" | ").collect();
        assert_eq!(groups.len(), 3, "{row}");
        assert_eq!(groups[1].trim(), groups[2].trim(), "{row}");
    }
}
