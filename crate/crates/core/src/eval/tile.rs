use crate::patch::Patch;
use crate::synth::Slide;
use crate::{Error, Result};

/// Start offsets along one axis of length `extent`: a regular grid with
/// stride `patch - overlap`, the last tile pushed back inside the bounds.
pub fn tile_offsets(extent: usize, patch: usize, overlap: usize) -> Vec<usize> {
    assert!(overlap < patch && patch <= extent);
    let stride = patch - overlap;
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + patch < extent).collect();
    out.push(extent - patch);
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub patch: Patch,
    pub x: usize,
    pub y: usize,
}

/// Covers the slide with overlapping square tiles, row by row.
pub fn tile_slide(slide: &Slide, patch: usize, overlap: usize) -> Result<Vec<Tile>> {
    let (w, h) = (slide.image.width, slide.image.height);
    if patch > w || patch > h || patch == 0 {
        return Err(Error::Tile {
            patch,
            width: w,
            height: h,
        });
    }
    if overlap >= patch {
        return Err(Error::Config(format!("tile overlap {overlap} must be smaller than the patch size {patch}")));
    }
    let xs = tile_offsets(w, patch, overlap);
    let ys = tile_offsets(h, patch, overlap);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let p = Patch::crop(&slide.image, &slide.slide_id, slide.scanner, x, y, patch)?;
            tiles.push(Tile { patch: p, x, y });
        }
    }
    Ok(tiles)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::patch::RgbImage;
    use crate::style::ScannerDomain;

    fn blank(w: usize, h: usize) -> Slide {
        Slide {
            slide_id: "s".into(),
            scanner: ScannerDomain::new(0).unwrap(),
            image: RgbImage::new(w, h),
            mitoses: Vec::new(),
        }
    }

    #[test]
    fn single_tile() {
        let t = tile_slide(&blank(128, 128), 128, 64).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].x, t[0].y), (0, 0));
    }

    #[test]
    fn three_by_three() {
        let t = tile_slide(&blank(256, 256), 128, 64).unwrap();
        let offs: Vec<(usize, usize)> = t.iter().map(|t| (t.x, t.y)).collect();
        let mut want = Vec::new();
        for y in [0, 64, 128] {
            for x in [0, 64, 128] {
                want.push((x, y));
            }
        }
        assert_eq!(offs, want);
    }

    #[test]
    fn too_large_patch() {
        assert!(matches!(tile_slide(&blank(100, 200), 128, 64), Err(Error::Tile { .. })));
    }

    #[test]
    fn random_sizes_are_covered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let patch = rng.random_range(1..80);
            let overlap = rng.random_range(0..patch);
            let extent = rng.random_range(patch..400);
            let offs = tile_offsets(extent, patch, overlap);
            let mut covered = vec![false; extent];
            for &o in &offs {
                assert!(o + patch <= extent);
                covered[o..o + patch].iter_mut().for_each(|c| *c = true);
            }
            assert!(covered.iter().all(|&c| c), "{extent} {patch} {overlap}");
            for w in offs.windows(2) {
                assert!(w[1] > w[0] && w[1] - w[0] <= patch - overlap);
            }
        }
    }
}
