//! RGB rasters, model-range patches, normalization and right-angle rotation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GroundTruthBox;
use crate::nn::Tensor;
use crate::style::ScannerDomain;

/// Interleaved 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Maps `[0, 255]` to `[-1, 1]` elementwise.
pub fn normalize(values: &[f64]) -> Result<Vec<f32>> {
    values
        .iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) {
                Ok((v / 127.5 - 1.0) as f32)
            } else {
                Err(Error::InvalidPixelRange(v))
            }
        })
        .collect()
}

/// Inverse of [`normalize`]; values are clamped to `[0, 255]`.
pub fn denormalize(values: &[f32]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| ((v as f64 + 1.0) * 127.5).clamp(0.0, 255.0))
        .collect()
}

#[inline]
pub fn to_model_range(v: u8) -> f32 {
    (v as f64 / 127.5 - 1.0) as f32
}

#[inline]
pub fn to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Where a patch was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub slide_id: String,
    pub x: usize,
    pub y: usize,
}

/// Square RGB patch in model range `[-1, 1]`, stored planar (`3 × size × size`).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<f32>,
    pub origin: PatchOrigin,
    pub scanner: ScannerDomain,
}

impl Patch {
    pub fn new(size: usize, pixels: Vec<f32>, origin: PatchOrigin, scanner: ScannerDomain) -> Result<Self> {
        if pixels.len() != 3 * size * size {
            return Err(Error::Shape(format!(
                "{} values for a {size}x{size} patch",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel {v} outside [-1, 1]")));
        }
        Ok(Self { size, pixels, origin, scanner })
    }

    /// Crops a `size × size` window with top-left corner `(x, y)`.
    pub fn crop(
        image: &RgbImage,
        slide_id: &str,
        scanner: ScannerDomain,
        x: usize,
        y: usize,
        size: usize,
    ) -> Result<Self> {
        if x + size > image.width || y + size > image.height {
            return Err(Error::Tile {
                patch: size,
                width: image.width,
                height: image.height,
            });
        }
        let plane = size * size;
        let mut pixels = vec![0.0f32; 3 * plane];
        for r in 0..size {
            let row = &image.data[((y + r) * image.width + x) * 3..][..size * 3];
            for c in 0..size {
                for ch in 0..3 {
                    pixels[ch * plane + r * size + c] = to_model_range(row[c * 3 + ch]);
                }
            }
        }
        Ok(Self {
            size,
            pixels,
            origin: PatchOrigin {
                slide_id: slide_id.to_string(),
                x,
                y,
            },
            scanner,
        })
    }

    /// Value at channel `ch`, row `r`, column `c`.
    #[inline]
    pub fn at(&self, ch: usize, r: usize, c: usize) -> f32 {
        self.pixels[(ch * self.size + r) * self.size + c]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([1, 3, self.size, self.size], self.pixels.clone())
    }

    /// Replaces the pixels with the first sample of `t`, clamped to `[-1, 1]`.
    pub fn with_pixels(&self, t: &Tensor<f32>, index: usize) -> Result<Self> {
        if t.c() != 3 || t.h() != self.size || t.w() != self.size {
            return Err(Error::Shape(format!("{:?} for a {} px patch", t.shape(), self.size)));
        }
        Ok(Self {
            size: self.size,
            pixels: t.sample(index).iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            origin: self.origin.clone(),
            scanner: self.scanner,
        })
    }

    pub fn to_rgb(&self) -> RgbImage {
        let plane = self.size * self.size;
        let mut img = RgbImage::new(self.size, self.size);
        for p in 0..plane {
            for ch in 0..3 {
                img.data[p * 3 + ch] = to_byte(self.pixels[ch * plane + p]);
            }
        }
        img
    }
}

/// Right-angle rotation, counterclockwise as displayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn from_degrees(angle: u32) -> Result<Self> {
        match angle {
            0 => Ok(Self::R0),
            90 => Ok(Self::R90),
            180 => Ok(Self::R180),
            270 => Ok(Self::R270),
            other => Err(Error::InvalidAngle(other)),
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Self::R0 => 0,
            Self::R90 => 90,
            Self::R180 => 180,
            Self::R270 => 270,
        }
    }

    /// Source pixel `(row, col)` that lands on `(r, c)` after rotation.
    #[inline]
    fn source(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        match self {
            Self::R0 => (r, c),
            Self::R90 => (c, n - 1 - r),
            Self::R180 => (n - 1 - r, n - 1 - c),
            Self::R270 => (n - 1 - c, r),
        }
    }

    /// Image of a continuous point inside an `n × n` square.
    pub fn point(self, x: f64, y: f64, n: f64) -> (f64, f64) {
        match self {
            Self::R0 => (x, y),
            Self::R90 => (y, n - x),
            Self::R180 => (n - x, n - y),
            Self::R270 => (n - y, x),
        }
    }
}

/// Rotates a square patch by `angle` degrees counterclockwise. Origin and
/// scanner are carried over unchanged.
pub fn rotate_patch(patch: &Patch, angle: u32) -> Result<Patch> {
    let rot = Rotation::from_degrees(angle)?;
    Ok(rotate(patch, rot))
}

pub fn rotate(patch: &Patch, rot: Rotation) -> Patch {
    let n = patch.size;
    let mut pixels = vec![0.0f32; patch.pixels.len()];
    for ch in 0..3 {
        for r in 0..n {
            for c in 0..n {
                let (sr, sc) = rot.source(r, c, n);
                pixels[(ch * n + r) * n + c] = patch.pixels[(ch * n + sr) * n + sc];
            }
        }
    }
    Patch {
        size: n,
        pixels,
        origin: patch.origin.clone(),
        scanner: patch.scanner,
    }
}

/// Rotates patch-local box centers together with their patch.
pub fn rotate_boxes(boxes: &[GroundTruthBox], rot: Rotation, size: usize) -> Vec<GroundTruthBox> {
    boxes
        .iter()
        .map(|b| {
            let (x, y) = rot.point(b.x, b.y, size as f64);
            GroundTruthBox::new(x, y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn patch_from(size: usize, pixels: Vec<f32>) -> Patch {
        Patch::new(
            size,
            pixels,
            PatchOrigin {
                slide_id: "t".into(),
                x: 3,
                y: 4,
            },
            ScannerDomain::new(2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert_eq!(normalize(&[0.0, 255.0, 127.5]).unwrap(), vec![-1.0, 1.0, 0.0]);
        assert!(matches!(normalize(&[256.0]), Err(Error::InvalidPixelRange(_))));
        assert!(matches!(normalize(&[-0.5]), Err(Error::InvalidPixelRange(_))));
    }

    #[test]
    fn rotation_by_zero_is_identity_and_other_angles_fail() {
        let p = patch_from(3, (0..27).map(|i| i as f32 / 27.0).collect());
        assert_eq!(rotate_patch(&p, 0).unwrap(), p);
        assert!(matches!(rotate_patch(&p, 45), Err(Error::InvalidAngle(45))));
    }

    #[test]
    fn half_turn_moves_corner_to_corner() {
        // index-permutation oracle on a 2x2 patch
        let p = patch_from(2, (0..12).map(|i| i as f32 / 12.0).collect());
        let r = rotate_patch(&p, 180).unwrap();
        for ch in 0..3 {
            assert_eq!(r.at(ch, 1, 1), p.at(ch, 0, 0));
            assert_eq!(r.at(ch, 0, 0), p.at(ch, 1, 1));
            assert_eq!(r.at(ch, 0, 1), p.at(ch, 1, 0));
        }
        assert_eq!(r.origin, p.origin);
        assert_eq!(r.scanner, p.scanner);
    }

    #[test]
    fn quarter_turn_is_counterclockwise() {
        // top-right pixel ends up top-left
        let mut px = vec![0.0f32; 12];
        px[1] = 1.0;
        let r = rotate_patch(&patch_from(2, px), 90).unwrap();
        assert_eq!(r.at(0, 0, 0), 1.0);
    }

    #[test]
    fn point_rotation_follows_pixels() {
        let n = 5;
        for rot in Rotation::ALL {
            let mut px = vec![0.0f32; 3 * n * n];
            px[2 * n + 4] = 1.0; // row 2, col 4
            let r = rotate(&patch_from(n, px), rot);
            let (x, y) = rot.point(4.5, 2.5, n as f64);
            assert_eq!(r.at(0, y as usize, x as usize), 1.0, "{rot:?}");
        }
    }

    proptest! {
        #[test]
        fn roundtrip_error_within_one_level(values in proptest::collection::vec(0.0f64..=255.0, 1..200)) {
            let back = denormalize(&normalize(&values).unwrap());
            for (a, b) in values.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }

        #[test]
        fn four_quarter_turns_restore_and_values_are_permuted(
            n in 1usize..7,
            seed in any::<u64>(),
        ) {
            let px: Vec<f32> = (0..3 * n * n)
                .map(|i| (((i as u64).wrapping_mul(seed | 1) >> 7) % 2001) as f32 / 1000.0 - 1.0)
                .collect();
            let p = patch_from(n, px);
            let mut r = p.clone();
            for _ in 0..4 {
                r = rotate_patch(&r, 90).unwrap();
            }
            prop_assert_eq!(&r, &p);
            for angle in [90, 180, 270] {
                let mut a: Vec<f32> = rotate_patch(&p, angle).unwrap().pixels;
                let mut b = p.pixels.clone();
                a.sort_by(f32::total_cmp);
                b.sort_by(f32::total_cmp);
                prop_assert_eq!(a, b);
            }
        }
    }
}
