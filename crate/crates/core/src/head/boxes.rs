//! Box utilities: IoU, anchor-based decoding of raw head output, and
//! class-wise greedy non-maximum suppression.

use crate::tensor::Tensor;

/// A decoded detection in input-pixel coordinates, corners ordered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Detection {
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }
}

pub fn iou_xyxy(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let ix = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let iy = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = ix * iy;
    let area_a = (a.2 - a.0).max(0.0) * (a.3 - a.1).max(0.0);
    let area_b = (b.2 - b.0).max(0.0) * (b.3 - b.1).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn iou_det(a: &Detection, b: &Detection) -> f64 {
    iou_xyxy((a.x1, a.y1, a.x2, a.y2), (b.x1, b.y1, b.x2, b.y2))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decode one scale of raw predictions `[N, A*(5+nc), h, w]` for image `n`.
///
/// Cell-relative center: `sigmoid(t)*2 - 0.5 + cell`; size:
/// `(2*sigmoid(t))^2 * anchor`; score: `sigmoid(obj) * sigmoid(cls)`.
/// Emits one detection per class whose combined score clears the
/// threshold, clipped to image bounds.
#[allow(clippy::too_many_arguments)]
pub fn decode_scale(
    raw: &Tensor,
    n: usize,
    anchors: &[(f64, f64)],
    stride: f64,
    n_classes: usize,
    conf_threshold: f64,
    img_w: f64,
    img_h: f64,
) -> Vec<Detection> {
    let s = raw.shape();
    let (c_total, gh, gw) = (s[1], s[2], s[3]);
    let na = anchors.len();
    let per = 5 + n_classes;
    assert_eq!(c_total, na * per, "raw channel mismatch");
    let mut out = Vec::new();
    let at = |ch: usize, gy: usize, gx: usize| raw.data()[((n * c_total + ch) * gh + gy) * gw + gx];
    for a in 0..na {
        let base = a * per;
        let (aw, ah) = anchors[a];
        for gy in 0..gh {
            for gx in 0..gw {
                let obj = sigmoid(at(base + 4, gy, gx));
                if obj * 1.0 < conf_threshold {
                    // even a perfect class score cannot clear the threshold
                    continue;
                }
                let bx = (sigmoid(at(base, gy, gx)) * 2.0 - 0.5 + gx as f64) * stride;
                let by = (sigmoid(at(base + 1, gy, gx)) * 2.0 - 0.5 + gy as f64) * stride;
                let bw = (2.0 * sigmoid(at(base + 2, gy, gx))).powi(2) * aw;
                let bh = (2.0 * sigmoid(at(base + 3, gy, gx))).powi(2) * ah;
                for c in 0..n_classes {
                    let score = obj * sigmoid(at(base + 5 + c, gy, gx));
                    if score < conf_threshold {
                        continue;
                    }
                    out.push(Detection {
                        class_id: c,
                        score,
                        x1: (bx - bw / 2.0).clamp(0.0, img_w),
                        y1: (by - bh / 2.0).clamp(0.0, img_h),
                        x2: (bx + bw / 2.0).clamp(0.0, img_w),
                        y2: (by + bh / 2.0).clamp(0.0, img_h),
                    });
                }
            }
        }
    }
    sort_by_score(&mut out);
    out
}

pub fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
}

/// Greedy class-wise suppression. Input must be score-sorted descending;
/// output preserves that order and no two same-class survivors overlap
/// above `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    debug_assert!(
        dets.windows(2).all(|p| p[0].score >= p[1].score),
        "nms input must be score-sorted"
    );
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for i in 0..dets.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i]);
        for j in (i + 1)..dets.len() {
            if !suppressed[j]
                && dets[j].class_id == dets[i].class_id
                && iou_det(&dets[i], &dets[j]) > iou_threshold
            {
                suppressed[j] = true;
            }
        }
    }
    keep
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

    #[test]
    fn iou_basics() {
        assert_eq!(iou_xyxy((0., 0., 2., 2.), (0., 0., 2., 2.)), 1.0);
        assert_eq!(iou_xyxy((0., 0., 1., 1.), (2., 2., 3., 3.)), 0.0);
        let v = iou_xyxy((0., 0., 2., 2.), (1., 0., 3., 2.));
        assert!((v - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn nms_disjoint_unchanged() {
        let dets = vec![
            det(0, 0.9, (0., 0., 1., 1.)),
            det(0, 0.8, (5., 5., 6., 6.)),
            det(1, 0.7, (0., 0., 1., 1.)),
        ];
        assert_eq!(nms(&dets, 0.5), dets);
    }

    #[test]
    fn nms_total_overlap_keeps_best() {
        let dets = vec![
            det(2, 0.9, (0., 0., 4., 4.)),
            det(2, 0.8, (0., 0., 4., 4.)),
        ];
        let kept = nms(&dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    /// Reference suppressor: repeatedly take the global best remaining
    /// detection and erase same-class overlaps.
    fn brute_force_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
        let mut pool: Vec<Detection> = dets.to_vec();
        let mut keep = Vec::new();
        while !pool.is_empty() {
            let best_i = pool
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.score.partial_cmp(&b.1.score).unwrap())
                .unwrap()
                .0;
            let best = pool.remove(best_i);
            pool.retain(|d| d.class_id != best.class_id || iou_det(&best, d) <= thr);
            keep.push(best);
        }
        keep
    }

    #[test]
    fn nms_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.gen_range(0..=20);
            let mut dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let x1 = rng.gen_range(0.0..50.0);
                    let y1 = rng.gen_range(0.0..50.0);
                    det(
                        rng.gen_range(0..3),
                        rng.gen_range(0.01..1.0),
                        (x1, y1, x1 + rng.gen_range(1.0..20.0), y1 + rng.gen_range(1.0..20.0)),
                    )
                })
                .collect();
            sort_by_score(&mut dets);
            let fast = nms(&dets, 0.45);
            let slow = brute_force_nms(&dets, 0.45);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn decode_threshold_annihilation_and_monotonicity() {
        // all objectness at -20: nothing survives
        let nc = 2;
        let mut raw = Tensor::zeros(&[1, 3 * (5 + nc), 4, 4]);
        for a in 0..3 {
            for gy in 0..4 {
                for gx in 0..4 {
                    raw.set4(0, a * (5 + nc) + 4, gy, gx, -20.0);
                }
            }
        }
        let anchors = [(8.0, 8.0), (16.0, 16.0), (32.0, 32.0)];
        let dets = decode_scale(&raw, 0, &anchors, 8.0, nc, 0.001, 32.0, 32.0);
        assert!(dets.is_empty());

        // raising one objectness logit never removes that box
        raw.set4(0, 4, 1, 2, 0.5);
        raw.set4(0, 5, 1, 2, 3.0);
        let d1 = decode_scale(&raw, 0, &anchors, 8.0, nc, 0.001, 32.0, 32.0);
        assert!(!d1.is_empty());
        raw.set4(0, 4, 1, 2, 2.0);
        let d2 = decode_scale(&raw, 0, &anchors, 8.0, nc, 0.001, 32.0, 32.0);
        assert!(d2.len() >= d1.len());
        assert!(d2[0].score > d1[0].score);
    }

    #[test]
    fn decode_single_hot_cell_matches_hand_arithmetic() {
        let nc = 1;
        let mut raw = Tensor::zeros(&[1, 3 * (5 + nc), 8, 8]);
        // everything else strongly off
        for ch in 0..raw.shape()[1] {
            for gy in 0..8 {
                for gx in 0..8 {
                    raw.set4(0, ch, gy, gx, -20.0);
                }
            }
        }
        // anchor 1, cell (3, 5): tx=0.2, ty=-0.3, tw=0.4, th=0.1, obj=1.5, cls=2.0
        let per = 5 + nc;
        raw.set4(0, per, 3, 5, 0.2);
        raw.set4(0, per + 1, 3, 5, -0.3);
        raw.set4(0, per + 2, 3, 5, 0.4);
        raw.set4(0, per + 3, 3, 5, 0.1);
        raw.set4(0, per + 4, 3, 5, 1.5);
        raw.set4(0, per + 5, 3, 5, 2.0);
        let anchors = [(10.0, 10.0), (20.0, 18.0), (40.0, 40.0)];
        let stride = 8.0;
        let dets = decode_scale(&raw, 0, &anchors, stride, nc, 0.001, 64.0, 64.0);
        assert_eq!(dets.len(), 1);
        let sig = |x: f64| 1.0 / (1.0 + (-x as f64).exp());
        let bx = (sig(0.2) * 2.0 - 0.5 + 5.0) * stride;
        let by = (sig(-0.3) * 2.0 - 0.5 + 3.0) * stride;
        let bw = (2.0 * sig(0.4)).powi(2) * 20.0;
        let bh = (2.0 * sig(0.1)).powi(2) * 18.0;
        let d = dets[0];
        assert!((d.x1 - (bx - bw / 2.0)).abs() < 1e-9);
        assert!((d.y1 - (by - bh / 2.0)).abs() < 1e-9);
        assert!((d.x2 - (bx + bw / 2.0)).abs() < 1e-9);
        assert!((d.y2 - (by + bh / 2.0)).abs() < 1e-9);
        assert!((d.score - sig(1.5) * sig(2.0)).abs() < 1e-12);
    }
}
