use crate::geometry::{GroundTruthBox, Rect};

pub const FG_IOU: f64 = 0.5;
pub const BG_IOU: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Foreground,
    Background,
    Ignore,
}

/// Per-anchor training targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub labels: Vec<AnchorLabel>,
    /// `(dx, dy, dw, dh)`; zero unless the anchor is foreground.
    pub targets: Vec<[f64; 4]>,
    pub matched: Vec<Option<usize>>,
}

impl Assignment {
    pub fn foreground(&self) -> usize {
        self.labels.iter().filter(|l| **l == AnchorLabel::Foreground).count()
    }
}

/// Centre offsets in anchor units and log size ratios.
pub fn encode(anchor: &Rect, target: &Rect) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [
        (tx - ax) / aw,
        (ty - ay) / ah,
        (target.width() / aw).ln(),
        (target.height() / ah).ln(),
    ]
}

/// Inverse of [`encode`].
pub fn decode(anchor: &Rect, d: [f64; 4]) -> Rect {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    // keep exp finite for untrained outputs
    let clip = (1000.0f64 / 16.0).ln();
    Rect::centered(
        ax + d[0] * aw,
        ay + d[1] * ah,
        aw * d[2].min(clip).exp(),
        ah * d[3].min(clip).exp(),
    )
}

/// IoU ≥ 0.5 is foreground, < 0.4 background, otherwise ignored. Every
/// ground truth also claims its best-overlapping anchor as foreground.
pub fn assign_targets(anchors: &[Rect], ground_truth: &[GroundTruthBox]) -> Assignment {
    let n = anchors.len();
    let mut labels = vec![AnchorLabel::Background; n];
    let mut targets = vec![[0.0; 4]; n];
    let mut matched = vec![None; n];
    if ground_truth.is_empty() {
        return Assignment { labels, targets, matched };
    }
    let gts: Vec<Rect> = ground_truth.iter().map(|g| g.rect()).collect();
    let mut best_for_gt = vec![(0.0f64, usize::MAX); gts.len()];
    for (i, a) in anchors.iter().enumerate() {
        let mut best = (0.0f64, 0usize);
        for (j, g) in gts.iter().enumerate() {
            let iou = a.iou(g);
            if iou > best.0 {
                best = (iou, j);
            }
            if iou > best_for_gt[j].0 {
                best_for_gt[j] = (iou, i);
            }
        }
        if best.0 >= FG_IOU {
            labels[i] = AnchorLabel::Foreground;
            matched[i] = Some(best.1);
        } else if best.0 >= BG_IOU {
            labels[i] = AnchorLabel::Ignore;
        }
    }
    for (j, &(iou, i)) in best_for_gt.iter().enumerate() {
        if iou > 0.0 {
            labels[i] = AnchorLabel::Foreground;
            matched[i] = Some(j);
        }
    }
    for i in 0..n {
        if let Some(j) = matched[i] {
            targets[i] = encode(&anchors[i], &gts[j]);
        }
    }
    Assignment { labels, targets, matched }
}
