use crate::geometry::Detection;

/// Greedy non-maximum suppression: keeps the highest-scoring detection,
/// drops every remaining one overlapping it by more than `iou_threshold`,
/// and repeats. Equal scores keep their input order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let rects: Vec<_> = detections.iter().map(Detection::rect).collect();
    let mut alive = vec![true; detections.len()];
    let mut kept = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        if !alive[a] {
            continue;
        }
        kept.push(detections[a]);
        for &b in &order[i + 1..] {
            if alive[b] && rects[a].iou(&rects[b]) > iou_threshold {
                alive[b] = false;
            }
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Reference: a detection survives iff no surviving detection ranked
    /// above it overlaps it. Decided rank by rank from scratch.
    fn brute_force(dets: &[Detection], thr: f64) -> Vec<Detection> {
        let n = dets.len();
        let ranks_above = |a: usize, b: usize| dets[a].score > dets[b].score || (dets[a].score == dets[b].score && a < b);
        let mut keep = vec![None::<bool>; n];
        while keep.iter().any(Option::is_none) {
            for b in 0..n {
                if keep[b].is_some() {
                    continue;
                }
                let higher: Vec<usize> = (0..n).filter(|&a| a != b && ranks_above(a, b)).collect();
                if higher.iter().all(|&a| keep[a].is_some()) {
                    let suppressed = higher
                        .iter()
                        .any(|&a| keep[a] == Some(true) && dets[a].rect().iou(&dets[b].rect()) > thr);
                    keep[b] = Some(!suppressed);
                }
            }
        }
        let mut out: Vec<usize> = (0..n).filter(|&i| keep[i] == Some(true)).collect();
        out.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        out.into_iter().map(|i| dets[i]).collect()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
        (0..n)
            .map(|_| {
                let score = (rng.random_range(0..20) as f64) / 19.0;
                Detection::new(rng.random_range(0.0..150.0), rng.random_range(0.0..150.0), score)
            })
            .collect()
    }

    #[test]
    fn single_and_identical() {
        let d = Detection::new(10.0, 10.0, 0.5);
        assert_eq!(nms(&[d], 0.5), vec![d]);
        let a = Detection::new(40.0, 40.0, 0.9);
        let b = Detection::new(40.0, 40.0, 0.8);
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(0..=50);
            let dets = random(&mut rng, n);
            let thr = rng.random_range(0.0..1.0);
            let fast = nms(&dets, thr);
            assert_eq!(fast, brute_force(&dets, thr));
            assert!(fast.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
}
