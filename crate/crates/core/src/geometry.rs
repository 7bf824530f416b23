//! Boxes, ground truth and detections. All coordinates are pixels with
//! `x` to the right and `y` down; a pixel `(row, col)` covers
//! `[col, col + 1) × [row, row + 1)`.

use serde::{Deserialize, Serialize};

/// Side of every mitotic-figure box.
pub const BOX_SIDE: f64 = 50.0;

/// Axis-aligned box given by its corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x0: cx - w / 2.0,
            y0: cy - h / 2.0,
            x1: cx + w / 2.0,
            y1: cy + h / 2.0,
        }
    }

    pub fn square(cx: f64, cy: f64, side: f64) -> Self {
        Self::centered(cx, cy, side, side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Mitotic-figure annotation: a center with the implied 50 px box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub x: f64,
    pub y: f64,
}

impl GroundTruthBox {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn side(&self) -> f64 {
        BOX_SIDE
    }

    pub fn rect(&self) -> Rect {
        Rect::square(self.x, self.y, BOX_SIDE)
    }
}

/// Scored detection; the box is the fixed 50 px square around the center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl Detection {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&score));
        Self { x, y, score }
    }

    pub fn side(&self) -> f64 {
        BOX_SIDE
    }

    pub fn rect(&self) -> Rect {
        Rect::square(self.x, self.y, BOX_SIDE)
    }
}
