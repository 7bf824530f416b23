use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mitodet::eval::write_predictions;
use mitodet::geometry::Detection;
use mitodet::synth::read_annotations;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mitodet")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn gen(dir: &Path, seed: &str) {
    let out = run(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        seed,
        "--slides-per-scanner",
        "2",
        "--slide-size",
        "256",
        "--mitoses-per-slide",
        "4",
        "--distractors-per-slide",
        "20",
    ]);
    assert!(out.status.success(), "{}", text(&out));
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "images"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() && p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_data_is_deterministic_and_counts_slides() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "7");
    gen(&b, "7");
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    assert_eq!(ta.keys().filter(|k| k.ends_with(".png")).count(), 10);
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn usage_errors_exit_with_2() {
    let out = run(&["gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_1_and_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = run(&[
        "train-detector",
        "--corpus",
        missing.to_str().unwrap(),
        "--out",
        tmp.path().join("d.ckpt").to_str().unwrap(),
        "--style-prob",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("nowhere"));
}

#[test]
fn detector_requires_transfer_stage_first() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    gen(&corpus, "1");
    let out = run(&[
        "train-detector",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        tmp.path().join("d.ckpt").to_str().unwrap(),
        "--style-prob",
        "0.2",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = text(&out);
    assert!(msg.contains("train-transfer") && msg.contains("transfer module is trained first"), "{msg}");
}

#[test]
fn training_writes_history_manifest_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    gen(&corpus, "2");
    let c = corpus.to_str().unwrap();
    let t = tmp.path().join("t.ckpt");
    let tcfg = tmp.path().join("transfer.toml");
    fs::write(&tcfg, "g_channels = 2\ng_res_blocks = 1\nd_channels = 2\nd_downsamples = 2\npatch_size = 32\nbatch_size = 2\n").unwrap();
    let out = run(&[
        "train-transfer", "--corpus", c, "--out", t.to_str().unwrap(), "--config", tcfg.to_str().unwrap(),
        "--iterations", "10", "--log-every", "0",
    ]);
    assert!(out.status.success(), "{}", text(&out));
    let rows = fs::read_to_string(tmp.path().join("t.ckpt.history.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 10);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("t.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-transfer");
    assert_eq!(manifest["config"]["iterations"], 10);
    assert_eq!(manifest["config"]["g_channels"], 2);

    let d = tmp.path().join("d.ckpt");
    let common = ["--corpus", c, "--batch-size", "2", "--patch-size", "64", "--log-every", "0"];
    let out = run(&[&["train-detector", "--out", d.to_str().unwrap(), "--iterations", "3", "--transfer", t.to_str().unwrap()][..], &common[..]].concat());
    assert!(out.status.success(), "{}", text(&out));
    let out = run(&[&["train-detector", "--out", d.to_str().unwrap(), "--iterations", "5", "--resume", d.to_str().unwrap(), "--transfer", t.to_str().unwrap()][..], &common[..]].concat());
    assert!(out.status.success(), "{}", text(&out));
    let hist = fs::read_to_string(tmp.path().join("d.ckpt.history.jsonl")).unwrap();
    let its: Vec<u64> = hist
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["iteration"].as_u64().unwrap())
        .collect();
    assert_eq!(its, vec![0, 1, 2, 3, 4]);
}

#[test]
fn eval_filters_scanners_and_rejects_unknown_slides() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    gen(&corpus, "3");
    let ann = read_annotations(&corpus).unwrap();
    let perfect: BTreeMap<String, Vec<Detection>> = ann
        .iter()
        .map(|(id, (_, b))| (id.clone(), b.iter().map(|g| Detection::new(g.x, g.y, 1.0)).collect()))
        .collect();
    let preds = tmp.path().join("p.json");
    write_predictions(&preds, &perfect).unwrap();
    let report = tmp.path().join("r.json");
    let out = run(&[
        "eval", "--predictions", preds.to_str().unwrap(), "--corpus", corpus.to_str().unwrap(),
        "--scanner", "4", "--report", report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(text(&out).contains("f1 1.0000"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let slides: Vec<&String> = r["per_slide"].as_object().unwrap().keys().collect();
    assert_eq!(slides.len(), 2);
    assert!(slides.iter().all(|s| s.starts_with("s4-")));

    let mut bogus = perfect.clone();
    bogus.insert("ghost-slide".into(), vec![]);
    write_predictions(&preds, &bogus).unwrap();
    let out = run(&["eval", "--predictions", preds.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("ghost-slide"));
}

#[test]
fn eval_reproduces_reported_triple() {
    // One slide with 166 figures: 117 found, 49 missed, plus 27 false alarms.
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    fs::create_dir_all(corpus.join("images")).unwrap();
    let figs: Vec<[f64; 2]> = (0..166).map(|i| [100.0 * (i % 20) as f64, 100.0 * (i / 20) as f64]).collect();
    let ann = serde_json::json!({ "fixture": { "scanner": 0, "mitoses": figs } });
    fs::write(corpus.join("annotations.json"), ann.to_string()).unwrap();
    let mut dets: Vec<Detection> = figs[..117].iter().map(|f| Detection::new(f[0] + 3.0, f[1], 0.9)).collect();
    dets.extend((0..27).map(|i| Detection::new(50.0 + 100.0 * i as f64, 5000.0, 0.8)));
    let preds = tmp.path().join("p.json");
    write_predictions(&preds, &BTreeMap::from([("fixture".to_string(), dets)])).unwrap();
    let out = run(&["eval", "--predictions", preds.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()]);
    let msg = text(&out);
    assert!(out.status.success(), "{msg}");
    assert!(msg.contains("precision 0.8125") && msg.contains("recall 0.7048") && msg.contains("f1 0.7548"), "{msg}");
}
