use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use mitodet::checkpoint::{load_detector, load_transfer, save_detector, save_transfer};
use mitodet::eval::{
    evaluate, infer_slides, read_predictions, write_predictions, EvalConfig, EvalReport,
};
use mitodet::pipeline::{train_detector_with, DetectorState, StyleTransfer, TrainConfig};
use mitodet::style::ScannerDomain;
use mitodet::synth::{generate_corpus, read_annotations, read_corpus, write_corpus, Corpus, CorpusConfig, Slide};
use mitodet::transfer::{train_transfer_with, TransferConfig, TransferState};
use mitodet::{Error, Result};

const MANIFEST_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "mitodet", version, about = "Style-augmented mitotic-figure detection on a synthetic multi-scanner corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData(GenData),
    /// Train the style-transfer module.
    TrainTransfer(TrainTransfer),
    /// Train the detector, optionally with style augmentation.
    TrainDetector(TrainDetector),
    /// Run a detector over whole slides.
    Infer(Infer),
    /// Score predictions against corpus annotations.
    Eval(Eval),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with corpus settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slides_per_scanner: Option<usize>,
    #[arg(long)]
    slide_size: Option<usize>,
    #[arg(long)]
    mitoses_per_slide: Option<usize>,
    #[arg(long)]
    distractors_per_slide: Option<usize>,
}

#[derive(Args)]
struct Common {
    /// Corpus directory written by `gen-data`.
    #[arg(long)]
    corpus: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Slides per scanner, last in id order, left out of training.
    #[arg(long, default_value_t = 0)]
    val_per_scanner: usize,
    /// Print losses every this many iterations (0 disables).
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct TrainTransfer {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    lambda_cls: Option<f64>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    lambda_gp: Option<f64>,
    #[arg(long)]
    lr_g: Option<f64>,
    #[arg(long)]
    lr_d: Option<f64>,
    #[arg(long)]
    n_critic: Option<usize>,
}

#[derive(Args)]
struct TrainDetector {
    #[command(flatten)]
    common: Common,
    /// Transfer checkpoint; required unless the style probability is 0.
    #[arg(long)]
    transfer: Option<PathBuf>,
    #[arg(long)]
    bg_fg_ratio: Option<f64>,
    /// Sample background patches only.
    #[arg(long)]
    background_only: bool,
    #[arg(long)]
    style_prob: Option<f64>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    clip_grad_norm: Option<f64>,
}

#[derive(Args)]
struct EvalFlags {
    /// TOML file with evaluation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    match_radius: Option<f64>,
    #[arg(long)]
    tile_overlap: Option<usize>,
    /// Restrict to slides of these scanners (repeatable).
    #[arg(long = "scanner")]
    scanners: Vec<u8>,
}

#[derive(Args)]
struct Infer {
    /// Detector checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Predictions file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these slide ids (repeatable).
    #[arg(long = "slide")]
    slides: Vec<String>,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
}

/// Everything needed to rerun a command.
#[derive(Serialize)]
struct RunManifest<'a> {
    format_version: u32,
    command: &'a str,
    args: Vec<String>,
    config: serde_json::Value,
    seed: Option<u64>,
    artifacts: BTreeMap<&'a str, PathBuf>,
    wall_clock_seconds: f64,
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| fail(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| fail(format!("config {}: {e}", path.display())))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn open_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.join("meta.json").is_file() {
        return Err(Error::CorpusFormat {
            path: dir.to_path_buf(),
            reason: "no meta.json here; run gen-data first".into(),
        });
    }
    read_corpus(dir)
}

fn training_slides(corpus: &Corpus, val_per_scanner: usize) -> Vec<&Slide> {
    corpus.split(val_per_scanner).0
}

/// Line-per-iteration JSON history; appends when resuming.
struct History(BufWriter<File>);

impl History {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let f = if append {
            OpenOptions::new().create(true).append(true).open(path)?
        } else {
            File::create(path)?
        };
        Ok(Self(BufWriter::new(f)))
    }

    fn push<T: Serialize>(&mut self, row: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.0, row)?;
        self.0.write_all(b"\n")
    }
}

fn gen_data(a: GenData, args: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg: CorpusConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.slides_per_scanner, a.slides_per_scanner);
    set(&mut cfg.slide_size, a.slide_size);
    set(&mut cfg.mitoses_per_slide, a.mitoses_per_slide);
    set(&mut cfg.distractors_per_slide, a.distractors_per_slide);
    let corpus = generate_corpus(&cfg)?;
    write_corpus(&corpus, &a.out)?;
    for s in ScannerDomain::ALL {
        let slides: Vec<&Slide> = corpus.by_scanner(s).collect();
        let figs: usize = slides.iter().map(|s| s.mitoses.len()).sum();
        println!("scanner {}: {} slides, {} mitoses", s.id(), slides.len(), figs);
    }
    println!("{} slides written to {}", corpus.slides.len(), a.out.display());
    write_manifest(
        &a.out.join("manifest.json"),
        &RunManifest {
            format_version: MANIFEST_VERSION,
            command: "gen-data",
            args,
            config: to_value(&cfg),
            seed: Some(cfg.seed),
            artifacts: BTreeMap::from([("corpus", a.out.clone())]),
            wall_clock_seconds: t0.elapsed().as_secs_f64(),
        },
    )
}

fn train_transfer_cmd(a: TrainTransfer, args: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    let c = &a.common;
    let (mut cfg, state) = match &c.resume {
        Some(path) => {
            let (cfg, state) = load_transfer(path)?;
            (cfg, Some(state))
        }
        None => (load_config::<TransferConfig>(c.config.as_deref())?, None),
    };
    set(&mut cfg.seed, c.seed);
    set(&mut cfg.iterations, c.iterations);
    set(&mut cfg.batch_size, c.batch_size);
    set(&mut cfg.patch_size, c.patch_size);
    set(&mut cfg.lambda_cls, a.lambda_cls);
    set(&mut cfg.lambda_rec, a.lambda_rec);
    set(&mut cfg.lambda_gp, a.lambda_gp);
    set(&mut cfg.lr_g, a.lr_g);
    set(&mut cfg.lr_d, a.lr_d);
    set(&mut cfg.n_critic, a.n_critic);
    cfg.validate()?;
    let corpus = open_corpus(&c.corpus)?;
    let slides = training_slides(&corpus, c.val_per_scanner);
    let resuming = state.is_some();
    let state = match state {
        Some(s) => s,
        None => TransferState::new(&cfg)?,
    };
    let history_path = sibling(&c.out, ".history.jsonl");
    let mut history = History::open(&history_path, resuming)?;
    let mut io_err = None;
    let out = train_transfer_with(&cfg, &slides, state, |h| {
        if c.log_every > 0 && h.iteration % c.log_every == 0 {
            eprintln!(
                "it {:6}  d_adv {:8.4}  d_cls {:6.4}  gp {:6.4}  g_cls {:6.4}  rec {:6.4}",
                h.iteration, h.d_adv, h.d_cls, h.gp, h.g_cls, h.rec
            );
        }
        match history.push(h) {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                io_err = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    history.0.flush()?;
    save_transfer(&c.out, &cfg, &out.state)?;
    println!("transfer checkpoint written to {} (iteration {})", c.out.display(), out.state.next_iteration);
    write_manifest(
        &sibling(&c.out, ".manifest.json"),
        &RunManifest {
            format_version: MANIFEST_VERSION,
            command: "train-transfer",
            args,
            config: to_value(&cfg),
            seed: Some(cfg.seed),
            artifacts: BTreeMap::from([
                ("corpus", c.corpus.clone()),
                ("checkpoint", c.out.clone()),
                ("history", history_path),
            ]),
            wall_clock_seconds: t0.elapsed().as_secs_f64(),
        },
    )
}

fn train_detector_cmd(a: TrainDetector, args: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    let c = &a.common;
    let (mut cfg, state) = match &c.resume {
        Some(path) => {
            let (cfg, state) = load_detector(path)?;
            (cfg, Some(state))
        }
        None => (load_config::<TrainConfig>(c.config.as_deref())?, None),
    };
    set(&mut cfg.seed, c.seed);
    set(&mut cfg.iterations, c.iterations);
    set(&mut cfg.batch_size, c.batch_size);
    set(&mut cfg.patch_size, c.patch_size);
    set(&mut cfg.bg_fg_ratio, a.bg_fg_ratio);
    set(&mut cfg.style_prob, a.style_prob);
    set(&mut cfg.lr_start, a.lr_start);
    set(&mut cfg.clip_grad_norm, a.clip_grad_norm);
    cfg.background_only |= a.background_only;
    cfg.validate()?;
    let generator = match (&a.transfer, cfg.style_prob > 0.0) {
        (Some(path), true) => Some(load_transfer(path)?.1.generator),
        (None, true) => {
            return Err(fail(format!(
                "style probability is {} but no --transfer checkpoint was given; \
                 the transfer module is trained first (train-transfer), then the detector \
                 (or pass --style-prob 0)",
                cfg.style_prob
            )))
        }
        (_, false) => None,
    };
    let corpus = open_corpus(&c.corpus)?;
    let slides = training_slides(&corpus, c.val_per_scanner);
    let resuming = state.is_some();
    let state = match state {
        Some(s) => s,
        None => DetectorState::new(&cfg)?,
    };
    let history_path = sibling(&c.out, ".history.jsonl");
    let mut history = History::open(&history_path, resuming)?;
    let mut io_err = None;
    let transfer = generator.as_ref().map(|g| g as &dyn StyleTransfer);
    let out = train_detector_with(&cfg, &slides, transfer, state, |h| {
        if c.log_every > 0 && h.iteration % c.log_every == 0 {
            eprintln!(
                "it {:6}  lr {:.4}  cls {:8.4}  reg {:8.4}  fg {:3}  styled {:2}",
                h.iteration, h.lr, h.cls, h.reg, h.foreground_anchors, h.transferred
            );
        }
        match history.push(h) {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                io_err = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    history.0.flush()?;
    save_detector(&c.out, &cfg, &out.state)?;
    println!("detector checkpoint written to {} (iteration {})", c.out.display(), out.state.next_iteration);
    let mut artifacts = BTreeMap::from([
        ("corpus", c.corpus.clone()),
        ("checkpoint", c.out.clone()),
        ("history", history_path),
    ]);
    if let Some(t) = &a.transfer {
        artifacts.insert("transfer", t.clone());
    }
    write_manifest(
        &sibling(&c.out, ".manifest.json"),
        &RunManifest {
            format_version: MANIFEST_VERSION,
            command: "train-detector",
            args,
            config: to_value(&cfg),
            seed: Some(cfg.seed),
            artifacts,
            wall_clock_seconds: t0.elapsed().as_secs_f64(),
        },
    )
}

fn eval_config(f: &EvalFlags) -> Result<EvalConfig> {
    let mut cfg: EvalConfig = load_config(f.config.as_deref())?;
    set(&mut cfg.score_threshold, f.score_threshold);
    set(&mut cfg.nms_iou, f.nms_iou);
    set(&mut cfg.match_radius, f.match_radius);
    set(&mut cfg.tile_overlap, f.tile_overlap);
    Ok(cfg)
}

fn scanner_filter(ids: &[u8]) -> Result<Vec<ScannerDomain>> {
    ids.iter().map(|&i| ScannerDomain::new(i)).collect()
}

fn infer_cmd(a: Infer, args: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    let cfg = eval_config(&a.eval)?;
    let scanners = scanner_filter(&a.eval.scanners)?;
    let (train_cfg, state) = load_detector(&a.model)?;
    let corpus = open_corpus(&a.corpus)?;
    let missing: Vec<String> = a.slides.iter().filter(|id| corpus.get(id).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::UnknownSlides(missing));
    }
    let slides: Vec<&Slide> = corpus
        .slides
        .iter()
        .filter(|s| scanners.is_empty() || scanners.contains(&s.scanner))
        .filter(|s| a.slides.is_empty() || a.slides.contains(&s.slide_id))
        .collect();
    let preds = infer_slides(&state.detector, &slides, train_cfg.patch_size, &cfg)?;
    write_predictions(&a.out, &preds)?;
    let n: usize = preds.values().map(Vec::len).sum();
    println!("{n} detections on {} slides written to {}", preds.len(), a.out.display());
    write_manifest(
        &sibling(&a.out, ".manifest.json"),
        &RunManifest {
            format_version: MANIFEST_VERSION,
            command: "infer",
            args,
            config: to_value(&cfg),
            seed: None,
            artifacts: BTreeMap::from([
                ("model", a.model.clone()),
                ("corpus", a.corpus.clone()),
                ("predictions", a.out.clone()),
            ]),
            wall_clock_seconds: t0.elapsed().as_secs_f64(),
        },
    )
}

fn eval_cmd(a: Eval, args: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    let cfg = eval_config(&a.eval)?;
    let scanners = scanner_filter(&a.eval.scanners)?;
    let ann = read_annotations(&a.corpus)?;
    let mut preds = read_predictions(&a.predictions)?;
    let unknown: Vec<String> = preds.keys().filter(|k| !ann.contains_key(*k)).cloned().collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownSlides(unknown));
    }
    let keep = |s: &ScannerDomain| scanners.is_empty() || scanners.contains(s);
    let truth: BTreeMap<String, _> = ann
        .into_iter()
        .filter(|(_, (s, _))| keep(s))
        .map(|(id, (_, boxes))| (id, boxes))
        .collect();
    preds.retain(|id, _| truth.contains_key(id));
    let report: EvalReport = evaluate(&preds, &truth, &cfg)?;
    println!(
        "precision {:.4}  recall {:.4}  f1 {:.4}  (tp {}  fp {}  fn {}, {} slides)",
        report.precision,
        report.recall,
        report.f1,
        report.tp,
        report.fp,
        report.fn_,
        report.per_slide.len()
    );
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?;
        fs::write(path, text)?;
        write_manifest(
            &sibling(path, ".manifest.json"),
            &RunManifest {
                format_version: MANIFEST_VERSION,
                command: "eval",
                args,
                config: to_value(&cfg),
                seed: None,
                artifacts: BTreeMap::from([
                    ("predictions", a.predictions.clone()),
                    ("corpus", a.corpus.clone()),
                    ("report", path.clone()),
                ]),
                wall_clock_seconds: t0.elapsed().as_secs_f64(),
            },
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a, args),
        Command::TrainTransfer(a) => train_transfer_cmd(a, args),
        Command::TrainDetector(a) => train_detector_cmd(a, args),
        Command::Infer(a) => infer_cmd(a, args),
        Command::Eval(a) => eval_cmd(a, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
