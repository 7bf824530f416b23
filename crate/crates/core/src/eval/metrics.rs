use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalConfig;
use crate::geometry::{Detection, GroundTruthBox};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_slide: BTreeMap<String, Counts>,
}

impl EvalReport {
    pub fn from_counts(per_slide: BTreeMap<String, Counts>) -> Self {
        let mut total = Counts::default();
        for c in per_slide.values() {
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_ += c.fn_;
        }
        Self {
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            per_slide,
        }
    }
}

/// Greedy one-to-one matching on one slide. Detections below the score
/// threshold are ignored; the rest, best first, claim the nearest unclaimed
/// figure within the match radius.
fn match_slide(dets: &[Detection], truth: &[GroundTruthBox], cfg: &EvalConfig) -> Counts {
    let mut kept: Vec<&Detection> = dets.iter().filter(|d| d.score >= cfg.score_threshold).collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut claimed = vec![false; truth.len()];
    let mut c = Counts::default();
    for d in kept {
        let best = truth
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed[*i])
            .map(|(i, g)| (i, (g.x - d.x).hypot(g.y - d.y)))
            .filter(|&(_, dist)| dist <= cfg.match_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, _)) => {
                claimed[i] = true;
                c.tp += 1;
            }
            None => c.fp += 1,
        }
    }
    c.fn_ = claimed.iter().filter(|&&x| !x).count();
    c
}

/// Scores detections against ground truth, slide by slide. Slides without
/// predictions count all their figures as misses; predictions for slides
/// without ground truth are an error.
pub fn evaluate(
    detections: &BTreeMap<String, Vec<Detection>>,
    truth: &BTreeMap<String, Vec<GroundTruthBox>>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let unknown: Vec<String> = detections.keys().filter(|k| !truth.contains_key(*k)).cloned().collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownSlides(unknown));
    }
    let per_slide = truth
        .iter()
        .map(|(id, gt)| {
            let dets = detections.get(id).map(Vec::as_slice).unwrap_or(&[]);
            (id.clone(), match_slide(dets, gt, cfg))
        })
        .collect();
    Ok(EvalReport::from_counts(per_slide))
}

pub fn write_predictions(path: &Path, predictions: &BTreeMap<String, Vec<Detection>>) -> Result<()> {
    let text = serde_json::to_string_pretty(predictions).map_err(std::io::Error::other)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::CorpusFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn one(id: &str, d: Vec<Detection>, g: Vec<GroundTruthBox>) -> EvalReport {
        let dets = BTreeMap::from([(id.to_string(), d)]);
        let gt = BTreeMap::from([(id.to_string(), g)]);
        evaluate(&dets, &gt, &EvalConfig::default()).unwrap()
    }

    #[test]
    fn empty_case() {
        let r = one("a", vec![], vec![]);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 0));
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn perfect_match() {
        let g = vec![GroundTruthBox::new(50.0, 50.0), GroundTruthBox::new(200.0, 80.0)];
        let d = vec![Detection::new(55.0, 48.0, 0.9), Detection::new(190.0, 85.0, 0.8)];
        let r = one("a", d, g);
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn duplicates_and_low_scores() {
        let g = vec![GroundTruthBox::new(50.0, 50.0)];
        let d = vec![
            Detection::new(52.0, 50.0, 0.9),
            Detection::new(50.0, 52.0, 0.95),
            Detection::new(50.0, 50.0, 0.5),
            Detection::new(300.0, 300.0, 0.99),
        ];
        let r = one("a", d, g);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 2, 0));
    }

    #[test]
    fn unknown_slide() {
        let dets = BTreeMap::from([("x".to_string(), vec![])]);
        let gt = BTreeMap::new();
        assert!(matches!(
            evaluate(&dets, &gt, &EvalConfig::default()),
            Err(Error::UnknownSlides(_))
        ));
    }

    #[test]
    fn one_to_one_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = EvalConfig::default();
        for _ in 0..200 {
            let g: Vec<_> = (0..rng.random_range(0..15))
                .map(|_| GroundTruthBox::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)))
                .collect();
            let d: Vec<_> = (0..rng.random_range(0..25))
                .map(|_| Detection::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), rng.random()))
                .collect();
            let above = d.iter().filter(|x| x.score >= cfg.score_threshold).count();
            let r = one("a", d, g.clone());
            assert!(r.tp <= above.min(g.len()));
            assert_eq!(r.tp + r.fn_, g.len());
            assert_eq!(r.tp + r.fp, above);
        }
    }

    #[test]
    fn f1_of_reported_triple() {
        let c = Counts { tp: 117, fp: 27, fn_: 49 };
        assert!((c.precision() - 0.8125).abs() < 1e-4);
        assert!((c.recall() - 0.7048).abs() < 1e-4);
        let (p, r) = (c.precision(), c.recall());
        assert!((c.f1() - 2.0 * p * r / (p + r)).abs() < 1e-12);
        assert!((c.f1() - 0.7548).abs() < 1e-4);
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let preds = BTreeMap::from([("s1".to_string(), vec![Detection::new(1.5, 2.25, 0.75)])]);
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
    }
}
