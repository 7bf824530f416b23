//! Procedural H&E-like slide renderer.
//!
//! Geometry and texture depend only on the seed; the scanner preset is a
//! per-pixel transform applied last, so annotations never depend on it.
//! Transcendental functions come from `libm` so output bytes do not depend
//! on the platform's math library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::preset::{ScannerStylePreset, DEFAULT_PRESETS};
use crate::error::{Error, Result};
use crate::geometry::GroundTruthBox;
use crate::patch::RgbImage;
use crate::style::ScannerDomain;

/// Minimum distance from a mitosis center to any border.
pub const BORDER_MARGIN: f64 = 32.0;
/// Minimum distance between two mitosis centers.
pub const MIN_SPACING: f64 = 50.0;
/// Distractors keep at least this far from any mitosis center.
const DISTRACTOR_CLEARANCE: f64 = 24.0;
const PLACEMENT_ATTEMPTS: usize = 400;
const LAYOUT_RESTARTS: usize = 8;

const BACKGROUND: [f64; 3] = [0.94, 0.80, 0.88];
const NUCLEUS: [f64; 3] = [0.50, 0.34, 0.66];
const PYKNOTIC: [f64; 3] = [0.30, 0.17, 0.44];
const MITOSIS: [f64; 3] = [0.24, 0.11, 0.38];

#[derive(Clone, Debug, PartialEq)]
pub struct Slide {
    pub slide_id: String,
    pub scanner: ScannerDomain,
    pub image: RgbImage,
    pub mitoses: Vec<GroundTruthBox>,
}

/// Renders one slide with the default preset of `scanner`.
pub fn generate_slide(
    seed: u64,
    scanner: ScannerDomain,
    size: usize,
    n_mitoses: usize,
    n_distractors: usize,
) -> Result<Slide> {
    generate_slide_with_preset(
        seed,
        scanner,
        &DEFAULT_PRESETS[scanner.index()],
        size,
        n_mitoses,
        n_distractors,
    )
}

pub fn generate_slide_with_preset(
    seed: u64,
    scanner: ScannerDomain,
    preset: &ScannerStylePreset,
    size: usize,
    n_mitoses: usize,
    n_distractors: usize,
) -> Result<Slide> {
    if size < 128 {
        return Err(Error::Config(format!("slide size {size} is below 128 px")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mitoses = place_mitoses(&mut rng, size, n_mitoses)?;
    let mut canvas = Canvas::background(&mut rng, size);

    for _ in 0..n_distractors {
        let Some((x, y)) = place_distractor(&mut rng, size, &mitoses) else {
            continue;
        };
        if rng.random::<f64>() < 0.15 {
            let r = rng.random_range(3.5..5.5);
            let tint = jitter(&mut rng, PYKNOTIC, 0.04);
            canvas.draw(&Shape::Disk { r }, x, y, 0.0, tint, 0.92, 0.0, &mut rng);
        } else {
            let a = rng.random_range(6.0..10.5);
            let b = a * rng.random_range(0.6..0.95);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let tint = jitter(&mut rng, NUCLEUS, 0.05);
            let opacity = rng.random_range(0.7..0.9);
            canvas.draw(&Shape::Ellipse { a, b }, x, y, theta, tint, opacity, 0.08, &mut rng);
        }
    }

    for m in &mitoses {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let shape = match rng.random_range(0..3) {
            0 => Shape::Plate {
                half_len: rng.random_range(8.0..11.0),
                r: rng.random_range(2.5..3.5),
                spikes: rng.random_range(5..9),
            },
            1 => Shape::Dumbbell {
                half_len: rng.random_range(5.0..7.5),
                r: rng.random_range(2.2..3.0),
                gap: rng.random_range(5.0..7.0),
            },
            _ => Shape::Star {
                core: rng.random_range(3.0..4.5),
                rays: rng.random_range(6..10),
                ray_len: rng.random_range(8.0..11.0),
            },
        };
        let tint = jitter(&mut rng, MITOSIS, 0.03);
        canvas.draw(&shape, m.x, m.y, theta, tint, 0.95, 0.05, &mut rng);
    }

    let base = canvas.to_image();
    Ok(Slide {
        slide_id: format!("{}-{seed:016x}", scanner.id()),
        scanner,
        image: super::preset::apply_scanner_style(&base, preset),
        mitoses,
    })
}

fn place_mitoses(rng: &mut ChaCha8Rng, size: usize, n: usize) -> Result<Vec<GroundTruthBox>> {
    let lo = BORDER_MARGIN as i64;
    let hi = size as i64 - BORDER_MARGIN as i64;
    let mut best = 0;
    // Greedy placement can paint itself into a corner; start over a few times.
    for _ in 0..LAYOUT_RESTARTS {
        let mut out: Vec<GroundTruthBox> = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..PLACEMENT_ATTEMPTS {
                let x = rng.random_range(lo..=hi) as f64;
                let y = rng.random_range(lo..=hi) as f64;
                if out.iter().all(|g| hypot(g.x - x, g.y - y) >= MIN_SPACING) {
                    out.push(GroundTruthBox::new(x, y));
                    break;
                }
            }
        }
        if out.len() == n {
            return Ok(out);
        }
        best = best.max(out.len());
    }
    Err(Error::PlacementFailure { wanted: n, placed: best })
}

fn place_distractor(rng: &mut ChaCha8Rng, size: usize, mitoses: &[GroundTruthBox]) -> Option<(f64, f64)> {
    for _ in 0..20 {
        let x = rng.random_range(6.0..size as f64 - 6.0);
        let y = rng.random_range(6.0..size as f64 - 6.0);
        if mitoses.iter().all(|g| hypot(g.x - x, g.y - y) >= DISTRACTOR_CLEARANCE) {
            return Some((x, y));
        }
    }
    None
}

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amount: f64) -> [f64; 3] {
    let shared = rng.random_range(-amount..amount);
    c.map(|v| (v + shared + rng.random_range(-amount / 3.0..amount / 3.0)).clamp(0.0, 1.0))
}

/// Figure outlines as signed distances (px, negative inside) in the
/// figure's own frame.
enum Shape {
    Disk { r: f64 },
    Ellipse { a: f64, b: f64 },
    /// Metaphase-like bar with short perpendicular spikes.
    Plate { half_len: f64, r: f64, spikes: usize },
    /// Anaphase-like pair of parallel bars.
    Dumbbell { half_len: f64, r: f64, gap: f64 },
    /// Prophase-like core with radiating rays.
    Star { core: f64, rays: usize, ray_len: f64 },
}

/// `sqrt` is correctly rounded everywhere, unlike the platform `hypot`.
#[inline]
fn hypot(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn segment_distance(u: f64, v: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((u - ax) * dx + (v - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    hypot(u - ax - t * dx, v - ay - t * dy)
}

impl Shape {
    fn extent(&self) -> f64 {
        match *self {
            Shape::Disk { r } => r,
            Shape::Ellipse { a, .. } => a,
            Shape::Plate { half_len, r, .. } => half_len + r + 4.0,
            Shape::Dumbbell { half_len, r, gap } => half_len.max(gap) + r + 2.0,
            Shape::Star { core, ray_len, .. } => core + ray_len,
        }
    }

    fn distance(&self, u: f64, v: f64) -> f64 {
        match *self {
            Shape::Disk { r } => hypot(u, v) - r,
            Shape::Ellipse { a, b } => (hypot(u / a, v / b) - 1.0) * b,
            Shape::Plate { half_len, r, spikes } => {
                let mut d = segment_distance(u, v, -half_len, 0.0, half_len, 0.0) - r;
                for k in 0..spikes {
                    let t = -half_len + 2.0 * half_len * (k as f64 + 0.5) / spikes as f64;
                    let side = if k % 2 == 0 { 1.0 } else { -1.0 };
                    d = d.min(segment_distance(u, v, t, 0.0, t, side * (r + 3.5)) - 1.0);
                }
                d
            }
            Shape::Dumbbell { half_len, r, gap } => {
                let a = segment_distance(u, v, -half_len, -gap, half_len, -gap) - r;
                let b = segment_distance(u, v, -half_len, gap, half_len, gap) - r;
                a.min(b)
            }
            Shape::Star { core, rays, ray_len } => {
                let mut d = hypot(u, v) - core;
                for k in 0..rays {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / rays as f64;
                    let (s, c) = (libm::sin(phi), libm::cos(phi));
                    let end = core + ray_len;
                    d = d.min(segment_distance(u, v, 0.0, 0.0, c * end, s * end) - 1.1);
                }
                d
            }
        }
    }
}

/// Smooth lattice noise in roughly `[-1, 1]`.
struct ValueNoise {
    cell: f64,
    gw: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, size: usize, cell: f64) -> Self {
        let gw = (size as f64 / cell) as usize + 2;
        let grid = (0..gw * gw).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { cell, gw, grid }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (fx as usize, fy as usize);
        let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
        let g = |i: usize, j: usize| self.grid[j.min(self.gw - 1) * self.gw + i.min(self.gw - 1)];
        let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
        let bottom = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

struct Canvas {
    size: usize,
    /// Planar RGB in `[0, 1]`.
    rgb: Vec<f64>,
}

impl Canvas {
    fn background(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let coarse = ValueNoise::new(rng, size, 96.0);
        let medium = ValueNoise::new(rng, size, 24.0);
        let hue = ValueNoise::new(rng, size, 64.0);
        let plane = size * size;
        let mut rgb = vec![0.0; 3 * plane];
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let lum = 0.05 * coarse.sample(fx, fy) + 0.03 * medium.sample(fx, fy);
                let shift = 0.03 * hue.sample(fx, fy);
                let grain = rng.random_range(-0.015..0.015);
                let p = y * size + x;
                rgb[p] = BACKGROUND[0] + lum + grain;
                rgb[plane + p] = BACKGROUND[1] + lum + shift + grain;
                rgb[2 * plane + p] = BACKGROUND[2] + lum - shift + grain;
            }
        }
        Self { size, rgb }
    }

    #[allow(clippy::too_many_arguments)]
    fn draw(
        &mut self,
        shape: &Shape,
        cx: f64,
        cy: f64,
        theta: f64,
        tint: [f64; 3],
        opacity: f64,
        texture: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let ext = shape.extent() + 2.0;
        let x0 = (cx - ext).floor().max(0.0) as usize;
        let y0 = (cy - ext).floor().max(0.0) as usize;
        let x1 = ((cx + ext).ceil() as usize).min(self.size - 1);
        let y1 = ((cy + ext).ceil() as usize).min(self.size - 1);
        let plane = self.size * self.size;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                let cover = (0.5 - shape.distance(u, v)).clamp(0.0, 1.0);
                if cover <= 0.0 {
                    continue;
                }
                let grain = if texture > 0.0 { rng.random_range(-texture..texture) } else { 0.0 };
                let a = cover * opacity;
                let p = y * self.size + x;
                for ch in 0..3 {
                    let v = &mut self.rgb[ch * plane + p];
                    *v = *v * (1.0 - a) + (tint[ch] + grain) * a;
                }
            }
        }
    }

    fn to_image(&self) -> RgbImage {
        let plane = self.size * self.size;
        let mut img = RgbImage::new(self.size, self.size);
        for p in 0..plane {
            for ch in 0..3 {
                img.data[p * 3 + ch] = libm::round(self.rgb[ch * plane + p].clamp(0.0, 1.0) * 255.0) as u8;
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(id: u8) -> ScannerDomain {
        ScannerDomain::new(id).unwrap()
    }

    #[test]
    fn empty_annotation_list_without_mitoses() {
        let s = generate_slide(1, d(0), 128, 0, 10).unwrap();
        assert!(s.mitoses.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_slide(9, d(1), 256, 3, 30).unwrap();
        let b = generate_slide(9, d(1), 256, 3, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spacing_and_margins_hold() {
        let s = generate_slide(3, d(2), 1024, 10, 150).unwrap();
        assert_eq!(s.mitoses.len(), 10);
        for (i, a) in s.mitoses.iter().enumerate() {
            assert!(a.x >= 25.0 && a.y >= 25.0 && a.x <= 1024.0 - 25.0 && a.y <= 1024.0 - 25.0);
            for b in &s.mitoses[i + 1..] {
                assert!(hypot(a.x - b.x, a.y - b.y) >= 50.0);
            }
        }
    }

    #[test]
    fn geometry_does_not_depend_on_the_scanner() {
        let a = generate_slide(5, d(0), 256, 4, 20).unwrap();
        let b = generate_slide(5, d(4), 256, 4, 20).unwrap();
        assert_eq!(a.mitoses, b.mitoses);
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn overcrowded_slide_fails_placement() {
        assert!(matches!(
            generate_slide(1, d(0), 128, 40, 0),
            Err(Error::PlacementFailure { wanted: 40, .. })
        ));
    }

    #[test]
    fn mitoses_are_darker_than_background() {
        let s = generate_slide(21, d(0), 256, 4, 0).unwrap();
        let luma = |p: [u8; 3]| p.iter().map(|&v| v as f64).sum::<f64>() / 3.0;
        let mut bg = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                bg += luma(s.image.pixel(x, y)) / 64.0;
            }
        }
        for m in &s.mitoses {
            // the darkest pixel near the center belongs to the figure
            let mut darkest = 255.0f64;
            for dy in -4i64..=4 {
                for dx in -4i64..=4 {
                    let px = s.image.pixel((m.x as i64 + dx) as usize, (m.y as i64 + dy) as usize);
                    darkest = darkest.min(luma(px));
                }
            }
            assert!(darkest < bg - 60.0, "figure at {m:?}: {darkest} vs background {bg}");
        }
    }
}
