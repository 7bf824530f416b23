//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header, then every tensor blob as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::nn::{Adam, Module, Sgd};
use crate::pipeline::{DetectorState, TrainConfig};
use crate::transfer::{init_models, LossPieces, TransferConfig, TransferState};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MITODET\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Transfer,
    Detector,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    config: serde_json::Value,
    next_iteration: usize,
    extra: serde_json::Value,
    blobs: Vec<(String, usize)>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct TransferExtra {
    opt_g: AdamMeta,
    opt_d: AdamMeta,
    last_g: LossPieces,
}

#[derive(Serialize, Deserialize)]
struct DetectorExtra {
    momentum: f64,
    weight_decay: f64,
}

fn fail(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_file(path: &Path, header: &Header, blobs: &[&[f32]]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| fail(path, e.to_string()))?;
    let total: usize = blobs.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blobs {
        for v in b.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<(Header, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| fail(path, e.to_string()))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail(path, "not a checkpoint file"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != FORMAT_VERSION {
        return Err(fail(path, format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let hlen = word(12) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| fail(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| fail(path, e.to_string()))?;
    let mut at = 16 + hlen;
    let mut blobs = Vec::with_capacity(header.blobs.len());
    for (name, len) in &header.blobs {
        let raw = bytes
            .get(at..at + 4 * len)
            .ok_or_else(|| fail(path, format!("truncated blob {name}")))?;
        blobs.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect());
        at += 4 * len;
    }
    if at != bytes.len() {
        return Err(fail(path, "trailing bytes"));
    }
    Ok((header, blobs))
}

/// Reads only the kind of a checkpoint.
pub fn checkpoint_kind(path: &Path) -> Result<CheckpointKind> {
    Ok(read_file(path)?.0.kind)
}

fn adam_meta(a: &Adam) -> AdamMeta {
    AdamMeta {
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        step: a.step,
    }
}

fn adam_from(meta: AdamMeta, m: Vec<f32>, v: Vec<f32>) -> Adam {
    Adam {
        lr: meta.lr,
        beta1: meta.beta1,
        beta2: meta.beta2,
        eps: meta.eps,
        step: meta.step,
        m,
        v,
    }
}

fn to_json<T: Serialize>(path: &Path, v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| fail(path, e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| fail(path, e.to_string()))
}

fn expect_kind(path: &Path, header: &Header, kind: CheckpointKind) -> Result<()> {
    if header.kind != kind {
        return Err(fail(path, format!("expected a {kind:?} checkpoint, found {:?}", header.kind)));
    }
    Ok(())
}

fn load_params(path: &Path, m: &mut impl Module<f32>, flat: &[f32], what: &str) -> Result<()> {
    if m.load_flat(flat) {
        Ok(())
    } else {
        Err(fail(
            path,
            format!("{what} has {} parameters, checkpoint holds {}", m.param_count(), flat.len()),
        ))
    }
}

pub fn save_transfer(path: &Path, cfg: &TransferConfig, state: &TransferState) -> Result<()> {
    let g = state.generator.flat_params();
    let d = state.discriminator.flat_params();
    let blobs: [(&str, &[f32]); 6] = [
        ("generator", &g),
        ("discriminator", &d),
        ("opt_g.m", &state.opt_g.m),
        ("opt_g.v", &state.opt_g.v),
        ("opt_d.m", &state.opt_d.m),
        ("opt_d.v", &state.opt_d.v),
    ];
    let header = Header {
        kind: CheckpointKind::Transfer,
        config: to_json(path, cfg)?,
        next_iteration: state.next_iteration,
        extra: to_json(
            path,
            &TransferExtra {
                opt_g: adam_meta(&state.opt_g),
                opt_d: adam_meta(&state.opt_d),
                last_g: state.last_g,
            },
        )?,
        blobs: blobs.iter().map(|(n, b)| (n.to_string(), b.len())).collect(),
    };
    write_file(path, &header, &blobs.map(|b| b.1))
}

pub fn load_transfer(path: &Path) -> Result<(TransferConfig, TransferState)> {
    let (header, blobs) = read_file(path)?;
    expect_kind(path, &header, CheckpointKind::Transfer)?;
    let cfg: TransferConfig = from_json(path, header.config)?;
    cfg.validate()?;
    let extra: TransferExtra = from_json(path, header.extra)?;
    let [g, d, gm, gv, dm, dv]: [Vec<f32>; 6] = blobs
        .try_into()
        .map_err(|_| fail(path, "expected 6 blobs in a transfer checkpoint"))?;
    let (mut generator, mut discriminator) = init_models(&cfg)?;
    load_params(path, &mut generator, &g, "generator")?;
    load_params(path, &mut discriminator, &d, "discriminator")?;
    let state = TransferState {
        generator,
        discriminator,
        opt_g: adam_from(extra.opt_g, gm, gv),
        opt_d: adam_from(extra.opt_d, dm, dv),
        next_iteration: header.next_iteration,
        last_g: extra.last_g,
    };
    Ok((cfg, state))
}

pub fn save_detector(path: &Path, cfg: &TrainConfig, state: &DetectorState) -> Result<()> {
    let params = state.detector.flat_params();
    let blobs: [(&str, &[f32]); 2] = [("detector", &params), ("velocity", &state.optimizer.velocity)];
    let header = Header {
        kind: CheckpointKind::Detector,
        config: to_json(path, cfg)?,
        next_iteration: state.next_iteration,
        extra: to_json(
            path,
            &DetectorExtra {
                momentum: state.optimizer.momentum,
                weight_decay: state.optimizer.weight_decay,
            },
        )?,
        blobs: blobs.iter().map(|(n, b)| (n.to_string(), b.len())).collect(),
    };
    write_file(path, &header, &blobs.map(|b| b.1))
}

pub fn load_detector(path: &Path) -> Result<(TrainConfig, DetectorState)> {
    let (header, blobs) = read_file(path)?;
    expect_kind(path, &header, CheckpointKind::Detector)?;
    let cfg: TrainConfig = from_json(path, header.config)?;
    cfg.validate()?;
    let extra: DetectorExtra = from_json(path, header.extra)?;
    let [params, velocity]: [Vec<f32>; 2] = blobs
        .try_into()
        .map_err(|_| fail(path, "expected 2 blobs in a detector checkpoint"))?;
    let mut detector = Detector::new(cfg.detector.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    load_params(path, &mut detector, &params, "detector")?;
    let state = DetectorState {
        detector,
        optimizer: Sgd {
            momentum: extra.momentum,
            weight_decay: extra.weight_decay,
            velocity,
        },
        next_iteration: header.next_iteration,
    };
    Ok((cfg, state))
}
