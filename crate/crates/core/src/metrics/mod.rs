//! Accuracy metrics (precision, recall, average precision), image-quality
//! metrics (PSNR, SSIM), and model-complexity accounting.

pub mod complexity;
pub mod quality;

pub use complexity::{ComplexityReport, ComplexityRow};
pub use quality::{psnr, ssim};

use crate::head::{iou_det, Detection};
use serde::Serialize;

/// Ground-truth box in the same pixel space as detections.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth {
    pub class_id: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl GroundTruth {
    pub fn as_det(&self) -> Detection {
        Detection {
            class_id: self.class_id,
            score: 1.0,
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
        }
    }
}

/// Matching outcome at one confidence threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Greedy same-class matching in descending score order: each detection
/// claims the highest-IoU unmatched ground truth above the threshold;
/// leftovers are false positives / false negatives.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> ConfusionCounts {
    debug_assert!(
        dets.windows(2).all(|p| p[0].score >= p[1].score),
        "detections must be score-sorted"
    );
    let mut taken = vec![false; gts.len()];
    let mut counts = ConfusionCounts::default();
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] || gt.class_id != d.class_id {
                continue;
            }
            let iou = iou_det(d, &gt.as_det());
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                counts.tp += 1;
            }
            None => counts.fp += 1,
        }
    }
    counts.fn_ = gts.len() - counts.tp;
    counts
}

/// Precision and recall with the no-prediction / no-truth conventions:
/// `0/0` reads as perfect precision (nothing asserted falsely) and perfect
/// recall (nothing missed).
pub fn precision_recall(counts: ConfusionCounts) -> (f64, f64) {
    let p = if counts.tp + counts.fp == 0 {
        1.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    };
    let r = if counts.tp + counts.fn_ == 0 {
        1.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    };
    (p, r)
}

/// A labelled detection set for one image.
pub struct ImageEval<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [GroundTruth],
}

/// Precision-recall curve and its interpolated area for one class.
#[derive(Debug, Clone, Serialize)]
pub struct PrCurve {
    pub class_id: usize,
    /// `(recall, precision)` points in non-decreasing recall order.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
    pub n_ground_truth: usize,
    pub n_detections: usize,
}

/// Average precision for one class over a set of images: rank detections
/// by score, greedily match within each image, build the monotone
/// precision envelope, integrate on a 101-point recall grid.
pub fn average_precision(images: &[ImageEval], class_id: usize, iou_threshold: f64) -> PrCurve {
    // (score, is_tp) over all images
    let mut flags: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for img in images {
        let gts: Vec<&GroundTruth> = img.gts.iter().filter(|g| g.class_id == class_id).collect();
        n_gt += gts.len();
        let mut dets: Vec<&Detection> = img.dets.iter().filter(|d| d.class_id == class_id).collect();
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let mut taken = vec![false; gts.len()];
        for d in dets {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let iou = iou_det(d, &gt.as_det());
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            if let Some((gi, _)) = best {
                taken[gi] = true;
                flags.push((d.score, true));
            } else {
                flags.push((d.score, false));
            }
        }
    }
    flags.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let n_det = flags.len();

    let mut points = Vec::with_capacity(n_det);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, is_tp) in &flags {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        let precision = tp as f64 / (tp + fp) as f64;
        points.push((recall, precision));
    }

    let ap = interpolated_ap(&points);
    PrCurve {
        class_id,
        points,
        ap,
        n_ground_truth: n_gt,
        n_detections: n_det,
    }
}

/// 101-point interpolation over the monotone precision envelope.
fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    // envelope: precision at recall >= r
    let mut env: Vec<(f64, f64)> = points.to_vec();
    let mut best = 0.0;
    for p in env.iter_mut().rev() {
        best = p.1.max(best);
        p.1 = best;
    }
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        // first point with recall >= r
        let prec = env
            .iter()
            .find(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .unwrap_or(0.0);
        total += prec;
    }
    total / 101.0
}

/// Dataset-level evaluation: AP per class and their mean. Classes with no
/// ground truth and no detections are excluded from the mean.
pub struct MapResult {
    pub per_class: Vec<PrCurve>,
    pub map50: f64,
    /// Classes that entered the mean.
    pub counted_classes: usize,
}

pub fn mean_average_precision(
    images: &[ImageEval],
    n_classes: usize,
    iou_threshold: f64,
) -> MapResult {
    let mut per_class = Vec::with_capacity(n_classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..n_classes {
        let curve = average_precision(images, c, iou_threshold);
        if curve.n_ground_truth > 0 || curve.n_detections > 0 {
            sum += curve.ap;
            counted += 1;
        }
        per_class.push(curve);
    }
    MapResult {
        per_class,
        map50: if counted == 0 { 0.0 } else { sum / counted as f64 },
        counted_classes: counted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn det(class_id: usize, score: f64, b: (f64, f64, f64, f64)) -> Detection {
        Detection {
            class_id,
            score,
            x1: b.0,
            y1: b.1,
            x2: b.2,
            y2: b.3,
        }
    }

    fn gt(class_id: usize, b: (f64, f64, f64, f64)) -> GroundTruth {
        GroundTruth {
            class_id,
            x1: b.0,
            y1: b.1,
            x2: b.2,
            y2: b.3,
        }
    }

    #[test]
    fn perfect_detector_counts() {
        let gts = vec![gt(0, (0., 0., 4., 4.)), gt(1, (8., 8., 12., 12.))];
        let dets = vec![det(0, 1.0, (0., 0., 4., 4.)), det(1, 1.0, (8., 8., 12., 12.))];
        let c = match_detections(&dets, &gts, 0.5);
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn no_detections_all_false_negative() {
        let gts = vec![gt(0, (0., 0., 4., 4.)); 3];
        let c = match_detections(&[], &gts, 0.5);
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, fn_: 3 });
        let (p, r) = precision_recall(c);
        assert_eq!(p, 1.0);
        assert_eq!(r, 0.0);
    }

    /// Reference matcher: same greedy rule, independently coded over all
    /// (det, gt) pairs with explicit bookkeeping.
    fn oracle_match(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> ConfusionCounts {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
        let mut used = vec![false; gts.len()];
        let mut tp = 0;
        for &di in &order {
            let mut best_iou = -1.0;
            let mut best_gi = None;
            for gi in 0..gts.len() {
                if used[gi] || gts[gi].class_id != dets[di].class_id {
                    continue;
                }
                let i = iou_det(&dets[di], &gts[gi].as_det());
                if i >= thr && i > best_iou {
                    best_iou = i;
                    best_gi = Some(gi);
                }
            }
            if let Some(gi) = best_gi {
                used[gi] = true;
                tp += 1;
            }
        }
        ConfusionCounts {
            tp,
            fp: dets.len() - tp,
            fn_: gts.len() - tp,
        }
    }

    #[test]
    fn random_matching_equals_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..100 {
            let mut dets: Vec<Detection> = (0..rng.gen_range(0..6))
                .map(|_| {
                    let x = rng.gen_range(0.0..20.0);
                    let y = rng.gen_range(0.0..20.0);
                    det(
                        rng.gen_range(0..2),
                        rng.gen_range(0.1..1.0),
                        (x, y, x + rng.gen_range(2.0..8.0), y + rng.gen_range(2.0..8.0)),
                    )
                })
                .collect();
            crate::head::sort_by_score(&mut dets);
            let gts: Vec<GroundTruth> = (0..rng.gen_range(0..4))
                .map(|_| {
                    let x = rng.gen_range(0.0..20.0);
                    let y = rng.gen_range(0.0..20.0);
                    gt(
                        rng.gen_range(0..2),
                        (x, y, x + rng.gen_range(2.0..8.0), y + rng.gen_range(2.0..8.0)),
                    )
                })
                .collect();
            assert_eq!(
                match_detections(&dets, &gts, 0.5),
                oracle_match(&dets, &gts, 0.5)
            );
        }
    }

    #[test]
    fn precision_recall_direct_substitution() {
        let (p, r) = precision_recall(ConfusionCounts { tp: 8, fp: 2, fn_: 2 });
        assert!((p - 0.8).abs() < 1e-12);
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ap_bounds() {
        let gts = vec![gt(0, (0., 0., 4., 4.))];
        let dets_good = vec![det(0, 0.9, (0., 0., 4., 4.))];
        let images = [ImageEval {
            dets: &dets_good,
            gts: &gts,
        }];
        let c = average_precision(&images, 0, 0.5);
        assert!((c.ap - 1.0).abs() < 1e-9, "perfect ranking ap = {}", c.ap);

        // all detections wrong class
        let dets_bad = vec![det(1, 0.9, (0., 0., 4., 4.))];
        let images = [ImageEval {
            dets: &dets_bad,
            gts: &gts,
        }];
        let c = average_precision(&images, 0, 0.5);
        assert_eq!(c.ap, 0.0);
    }

    /// Enumeration oracle: explicit threshold sweep over every distinct
    /// score, exact envelope via max-scan, 101-point grid lookup.
    fn oracle_ap(images: &[ImageEval], class_id: usize, thr: f64) -> f64 {
        let mut scores: Vec<f64> = images
            .iter()
            .flat_map(|im| im.dets.iter())
            .filter(|d| d.class_id == class_id)
            .map(|d| d.score)
            .collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        scores.dedup();
        let n_gt: usize = images
            .iter()
            .map(|im| im.gts.iter().filter(|g| g.class_id == class_id).count())
            .sum();
        let mut pr: Vec<(f64, f64)> = Vec::new();
        for &cut in &scores {
            let mut tp = 0;
            let mut fp = 0;
            for im in images {
                let mut dets: Vec<&Detection> = im
                    .dets
                    .iter()
                    .filter(|d| d.class_id == class_id && d.score >= cut)
                    .collect();
                dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                let gts: Vec<&GroundTruth> =
                    im.gts.iter().filter(|g| g.class_id == class_id).collect();
                let mut used = vec![false; gts.len()];
                for d in dets {
                    let mut best: Option<(usize, f64)> = None;
                    for (gi, g) in gts.iter().enumerate() {
                        if used[gi] {
                            continue;
                        }
                        let iou = iou_det(d, &g.as_det());
                        if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                            best = Some((gi, iou));
                        }
                    }
                    if let Some((gi, _)) = best {
                        used[gi] = true;
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            let precision = if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            pr.push((recall, precision));
        }
        pr.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut total = 0.0;
        for i in 0..=100 {
            let r = i as f64 / 100.0;
            let best = pr
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            total += best;
        }
        total / 101.0
    }

    #[test]
    fn six_detection_fixture_matches_enumeration_oracle() {
        let gts = vec![
            gt(0, (0., 0., 4., 4.)),
            gt(0, (10., 10., 14., 14.)),
            gt(0, (20., 20., 24., 24.)),
        ];
        let dets = vec![
            det(0, 0.95, (0., 0., 4., 4.)),     // tp
            det(0, 0.9, (30., 30., 34., 34.)),  // fp
            det(0, 0.85, (10., 10., 14., 14.)), // tp
            det(0, 0.7, (0., 1., 4., 5.)),      // fp (gt taken)
            det(0, 0.6, (20., 20., 24., 24.)),  // tp
            det(0, 0.5, (40., 40., 44., 44.)),  // fp
        ];
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        let got = average_precision(&images, 0, 0.5);
        let want = oracle_ap(&images, 0, 0.5);
        assert!((got.ap - want).abs() < 1e-6, "{} vs {want}", got.ap);
    }

    #[test]
    fn random_fixtures_match_enumeration_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..50 {
            let gts: Vec<GroundTruth> = (0..rng.gen_range(1..5))
                .map(|_| {
                    let x = rng.gen_range(0.0..30.0);
                    let y = rng.gen_range(0.0..30.0);
                    gt(0, (x, y, x + rng.gen_range(2.0..8.0), y + rng.gen_range(2.0..8.0)))
                })
                .collect();
            let dets: Vec<Detection> = (0..rng.gen_range(0..8))
                .map(|_| {
                    let x = rng.gen_range(0.0..30.0);
                    let y = rng.gen_range(0.0..30.0);
                    det(
                        0,
                        rng.gen_range(0.05..1.0),
                        (x, y, x + rng.gen_range(2.0..8.0), y + rng.gen_range(2.0..8.0)),
                    )
                })
                .collect();
            let images = [ImageEval {
                dets: &dets,
                gts: &gts,
            }];
            let got = average_precision(&images, 0, 0.5);
            let want = oracle_ap(&images, 0, 0.5);
            assert!(
                (got.ap - want).abs() < 1e-9,
                "ap {} vs oracle {want}",
                got.ap
            );
        }
    }

    #[test]
    fn ap_invariant_under_monotone_score_rescaling() {
        let gts = vec![gt(0, (0., 0., 4., 4.)), gt(0, (10., 10., 14., 14.))];
        let dets = vec![
            det(0, 0.9, (0., 0., 4., 4.)),
            det(0, 0.6, (30., 30., 34., 34.)),
            det(0, 0.3, (10., 10., 14., 14.)),
        ];
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        let base = average_precision(&images, 0, 0.5).ap;
        // strictly monotone rescale: sqrt then shrink into (0, 0.5)
        let rescaled: Vec<Detection> = dets
            .iter()
            .map(|d| Detection {
                score: d.score.sqrt() * 0.5,
                ..*d
            })
            .collect();
        let images = [ImageEval {
            dets: &rescaled,
            gts: &gts,
        }];
        let again = average_precision(&images, 0, 0.5).ap;
        assert!((base - again).abs() < 1e-12);
    }

    #[test]
    fn removing_a_false_positive_never_decreases_ap() {
        let gts = vec![gt(0, (0., 0., 4., 4.)), gt(0, (10., 10., 14., 14.))];
        let dets = vec![
            det(0, 0.9, (0., 0., 4., 4.)),
            det(0, 0.8, (30., 30., 34., 34.)), // fp
            det(0, 0.7, (10., 10., 14., 14.)),
        ];
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        let with_fp = average_precision(&images, 0, 0.5).ap;
        let cleaned: Vec<Detection> = vec![dets[0], dets[2]];
        let images = [ImageEval {
            dets: &cleaned,
            gts: &gts,
        }];
        let without_fp = average_precision(&images, 0, 0.5).ap;
        assert!(without_fp >= with_fp);
    }

    #[test]
    fn map_excludes_absent_classes() {
        let gts = vec![gt(0, (0., 0., 4., 4.))];
        let dets = vec![det(0, 0.9, (0., 0., 4., 4.))];
        let images = [ImageEval {
            dets: &dets,
            gts: &gts,
        }];
        // class 1 has no gt and no dets: excluded from the mean
        let res = mean_average_precision(&images, 2, 0.5);
        assert_eq!(res.counted_classes, 1);
        assert!((res.map50 - 1.0).abs() < 1e-9);
    }
}
