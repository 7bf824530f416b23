use std::collections::BTreeMap;

use super::{nms, tile_slide, EvalConfig};
use crate::detector::Detector;
use crate::geometry::{Detection, Rect};
use crate::nn::Tensor;
use crate::synth::Slide;
use crate::Result;

/// Detections per slide id.
pub type Predictions = BTreeMap<String, Vec<Detection>>;

const TILE_BATCH: usize = 8;

/// Maps per-tile boxes to slide coordinates, keeps those scoring at least
/// the threshold with their centre inside their own tile, then applies NMS.
fn aggregate(tiles: &[((usize, usize), Vec<(Rect, f64)>)], patch: usize, cfg: &EvalConfig) -> Vec<Detection> {
    let p = patch as f64;
    let mut all = Vec::new();
    for ((x, y), dets) in tiles {
        for (r, score) in dets {
            let (cx, cy) = r.center();
            if *score >= cfg.score_threshold && (0.0..p).contains(&cx) && (0.0..p).contains(&cy) {
                all.push(Detection::new(cx + *x as f64, cy + *y as f64, score.clamp(0.0, 1.0)));
            }
        }
    }
    // Fixed order so that ties in score resolve independently of tiling order.
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.x.total_cmp(&b.x)).then(a.y.total_cmp(&b.y)));
    nms(&all, cfg.nms_iou)
}

/// Detects figures on a whole slide: tiles it, runs the detector on every
/// tile and merges the results. Patches are used as they are.
pub fn infer_slide(model: &Detector<f32>, slide: &Slide, patch: usize, cfg: &EvalConfig) -> Result<Vec<Detection>> {
    cfg.validate(patch)?;
    let tiles = tile_slide(slide, patch, cfg.tile_overlap)?;
    let mut per_tile = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(TILE_BATCH) {
        let x = Tensor::stack(&chunk.iter().map(|t| t.patch.to_tensor()).collect::<Vec<_>>());
        for (t, dets) in chunk.iter().zip(model.detect(&x)?) {
            let kept = dets.into_iter().filter(|d| d.1 >= cfg.score_threshold).collect();
            per_tile.push(((t.x, t.y), kept));
        }
    }
    Ok(aggregate(&per_tile, patch, cfg))
}

pub fn infer_slides(model: &Detector<f32>, slides: &[&Slide], patch: usize, cfg: &EvalConfig) -> Result<Predictions> {
    slides
        .iter()
        .map(|s| Ok((s.slide_id.clone(), infer_slide(model, s, patch, cfg)?)))
        .collect()
}
