//! Deterministic multi-scanner slide corpus standing in for real whole-slide
//! images.

mod corpus;
mod preset;
mod render;

pub use corpus::{
    generate_corpus, generate_indexed_slide, image_path, read_annotations, read_corpus, read_png,
    slide_id, slide_seed, write_corpus, write_png, Corpus, CorpusConfig, CorpusMeta, CORPUS_FORMAT_VERSION,
};
pub use preset::{apply_scanner_style, ScannerStylePreset, DEFAULT_PRESETS};
pub use render::{generate_slide, generate_slide_with_preset, Slide, BORDER_MARGIN, MIN_SPACING};
