//! On-disk corpus layout:
//!
//! ```text
//! <dir>/meta.json          {format_version, patch_size, presets: [5], corpus_seed}
//! <dir>/images/<id>.png    8-bit RGB, lossless
//! <dir>/annotations.json   {<id>: {scanner, mitoses: [[x, y], ...]}}
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preset::{ScannerStylePreset, DEFAULT_PRESETS};
use super::render::{generate_slide_with_preset, Slide};
use crate::error::{Error, Result};
use crate::geometry::GroundTruthBox;
use crate::patch::RgbImage;
use crate::style::ScannerDomain;

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub format_version: u32,
    pub patch_size: usize,
    pub presets: Vec<ScannerStylePreset>,
    pub corpus_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub slides_per_scanner: usize,
    pub slide_size: usize,
    pub mitoses_per_slide: usize,
    pub distractors_per_slide: usize,
    pub patch_size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            slides_per_scanner: 20,
            slide_size: 1024,
            mitoses_per_slide: 12,
            distractors_per_slide: 220,
            patch_size: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub slides: Vec<Slide>,
}

/// Per-slide seed; independent of generation order.
pub fn slide_seed(corpus_seed: u64, scanner: ScannerDomain, index: usize) -> u64 {
    let mut z = corpus_seed
        ^ (scanner.id() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn slide_id(scanner: ScannerDomain, index: usize) -> String {
    format!("s{}-{index:03}", scanner.id())
}

/// Generates `slides_per_scanner` slides for each of the five scanners. The
/// mitosis count of each slide varies by up to ±25 % around the configured
/// mean.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    let mut slides = Vec::with_capacity(cfg.slides_per_scanner * 5);
    for scanner in ScannerDomain::ALL {
        for index in 0..cfg.slides_per_scanner {
            slides.push(generate_indexed_slide(cfg, scanner, index)?);
        }
    }
    Ok(Corpus {
        meta: CorpusMeta {
            format_version: CORPUS_FORMAT_VERSION,
            patch_size: cfg.patch_size,
            presets: DEFAULT_PRESETS.to_vec(),
            corpus_seed: cfg.seed,
        },
        slides,
    })
}

pub fn generate_indexed_slide(cfg: &CorpusConfig, scanner: ScannerDomain, index: usize) -> Result<Slide> {
    let seed = slide_seed(cfg.seed, scanner, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let spread = cfg.mitoses_per_slide / 4;
    let n = rng.random_range(cfg.mitoses_per_slide - spread..=cfg.mitoses_per_slide + spread);
    let mut slide = generate_slide_with_preset(
        seed,
        scanner,
        &DEFAULT_PRESETS[scanner.index()],
        cfg.slide_size,
        n,
        cfg.distractors_per_slide,
    )?;
    slide.slide_id = slide_id(scanner, index);
    Ok(slide)
}

impl Corpus {
    pub fn by_scanner(&self, scanner: ScannerDomain) -> impl Iterator<Item = &Slide> {
        self.slides.iter().filter(move |s| s.scanner == scanner)
    }

    pub fn get(&self, id: &str) -> Option<&Slide> {
        self.slides.iter().find(|s| s.slide_id == id)
    }

    /// Splits every scanner's slides (in id order) into training slides and
    /// the last `val_per_scanner` validation slides.
    pub fn split(&self, val_per_scanner: usize) -> (Vec<&Slide>, Vec<&Slide>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for scanner in ScannerDomain::ALL {
            let mut slides: Vec<&Slide> = self.by_scanner(scanner).collect();
            slides.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
            let cut = slides.len().saturating_sub(val_per_scanner);
            val.extend_from_slice(&slides[cut..]);
            slides.truncate(cut);
            train.extend(slides);
        }
        (train, val)
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationEntry {
    scanner: u8,
    mitoses: Vec<[f64; 2]>,
}

fn format_err(path: &Path, reason: impl ToString) -> Error {
    Error::CorpusFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let meta_path = dir.join("meta.json");
    let f = BufWriter::new(File::create(&meta_path)?);
    serde_json::to_writer_pretty(f, &corpus.meta).map_err(|e| format_err(&meta_path, e))?;

    let mut ann = BTreeMap::new();
    for s in &corpus.slides {
        write_png(&images.join(format!("{}.png", s.slide_id)), &s.image)?;
        ann.insert(
            s.slide_id.clone(),
            AnnotationEntry {
                scanner: s.scanner.id(),
                mitoses: s.mitoses.iter().map(|g| [g.x, g.y]).collect(),
            },
        );
    }
    let ann_path = dir.join("annotations.json");
    let f = BufWriter::new(File::create(&ann_path)?);
    serde_json::to_writer_pretty(f, &ann).map_err(|e| format_err(&ann_path, e))?;
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let meta_path = dir.join("meta.json");
    let meta: CorpusMeta = read_json(&meta_path)?;
    if meta.format_version != CORPUS_FORMAT_VERSION {
        return Err(format_err(
            &meta_path,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.presets.len() != 5 {
        return Err(format_err(&meta_path, format!("expected 5 presets, found {}", meta.presets.len())));
    }
    let ann_path = dir.join("annotations.json");
    let ann: BTreeMap<String, AnnotationEntry> = read_json(&ann_path)?;
    let mut slides = Vec::with_capacity(ann.len());
    for (id, entry) in ann {
        let scanner = ScannerDomain::new(entry.scanner)
            .map_err(|_| format_err(&ann_path, format!("slide {id}: unknown scanner id {}", entry.scanner)))?;
        let img_path = dir.join("images").join(format!("{id}.png"));
        let image = read_png(&img_path)?;
        slides.push(Slide {
            slide_id: id,
            scanner,
            image,
            mitoses: entry.mitoses.iter().map(|&[x, y]| GroundTruthBox::new(x, y)).collect(),
        });
    }
    Ok(Corpus { meta, slides })
}

/// Annotation map only, without decoding images.
pub fn read_annotations(dir: &Path) -> Result<BTreeMap<String, (ScannerDomain, Vec<GroundTruthBox>)>> {
    let ann_path = dir.join("annotations.json");
    let ann: BTreeMap<String, AnnotationEntry> = read_json(&ann_path)?;
    ann.into_iter()
        .map(|(id, e)| {
            let scanner = ScannerDomain::new(e.scanner)
                .map_err(|_| format_err(&ann_path, format!("slide {id}: unknown scanner id {}", e.scanner)))?;
            let boxes = e.mitoses.iter().map(|&[x, y]| GroundTruthBox::new(x, y)).collect();
            Ok((id, (scanner, boxes)))
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| format_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| format_err(path, e))
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(f, image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| format_err(path, e))?;
    w.write_image_data(&image.data).map_err(|e| format_err(path, e))?;
    w.finish().map_err(|e| format_err(path, e))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let f = File::open(path).map_err(|e| format_err(path, e))?;
    let dec = png::Decoder::new(BufReader::new(f));
    let mut reader = dec.read_info().map_err(|e| format_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(
            path,
            format!("expected 8-bit RGB, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    buf.truncate(info.buffer_size());
    RgbImage::from_raw(info.width as usize, info.height as usize, buf).map_err(|e| format_err(path, e))
}

/// Path of a slide image inside a corpus directory.
pub fn image_path(dir: &Path, slide_id: &str) -> PathBuf {
    dir.join("images").join(format!("{slide_id}.png"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> CorpusConfig {
        CorpusConfig {
            seed: 4,
            slides_per_scanner: 1,
            slide_size: 128,
            mitoses_per_slide: 2,
            distractors_per_slide: 8,
            patch_size: 64,
        }
    }

    #[test]
    fn empty_corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus {
            meta: CorpusMeta {
                format_version: CORPUS_FORMAT_VERSION,
                patch_size: 128,
                presets: DEFAULT_PRESETS.to_vec(),
                corpus_seed: 0,
            },
            slides: vec![],
        };
        write_corpus(&corpus, dir.path()).unwrap();
        assert!(dir.path().join("meta.json").exists());
        let ann = fs::read_to_string(dir.path().join("annotations.json")).unwrap();
        assert_eq!(ann.trim(), "{}");
        assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn slide_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus = generate_corpus(&tiny_cfg()).unwrap();
        corpus.slides.truncate(1);
        write_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn unknown_scanner_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus = generate_corpus(&tiny_cfg()).unwrap();
        corpus.slides.truncate(1);
        write_corpus(&corpus, dir.path()).unwrap();
        let p = dir.path().join("annotations.json");
        let text = fs::read_to_string(&p).unwrap().replace("\"scanner\": 0", "\"scanner\": 7");
        fs::write(&p, text).unwrap();
        match read_corpus(dir.path()) {
            Err(Error::CorpusFormat { path, reason }) => {
                assert_eq!(path, p);
                assert!(reason.contains('7'));
            }
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut corpus = generate_corpus(&tiny_cfg()).unwrap();
        corpus.slides.truncate(1);
        write_corpus(&corpus, dir.path()).unwrap();
        let img = image_path(dir.path(), &corpus.slides[0].slide_id);
        fs::remove_file(&img).unwrap();
        match read_corpus(dir.path()) {
            Err(Error::CorpusFormat { path, .. }) => assert_eq!(path, img),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn split_keeps_the_last_slides_for_validation() {
        let cfg = CorpusConfig {
            slides_per_scanner: 3,
            ..tiny_cfg()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let (train, val) = corpus.split(1);
        assert_eq!(train.len(), 10);
        assert_eq!(val.len(), 5);
        assert!(val.iter().all(|s| s.slide_id.ends_with("-002")));
    }

    #[test]
    fn slide_seeds_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for s in ScannerDomain::ALL {
            for i in 0..100 {
                assert!(seen.insert(slide_seed(7, s, i)));
            }
        }
    }
}
