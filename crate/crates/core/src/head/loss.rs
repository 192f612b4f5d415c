//! Detection loss: anchor-ratio target assignment, CIoU box regression,
//! objectness and classification cross-entropies, and the weighted
//! per-layer combination, plus the two-task total.

use super::HeadConfig;
use crate::autograd::{self, NodeId};
use crate::data::labels::BoundingBoxLabel;
use crate::error::{Error, Result};
use crate::nn::Forward;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_loc: f64,
    pub lambda_obj: f64,
    /// Class-loss weight; `None` applies the family scaling 0.5 * nc / 80.
    pub lambda_cls: Option<f64>,
    /// Per-layer weights a_l (location), b_l (objectness), c_l (class).
    pub layer_weights_a: Vec<f64>,
    pub layer_weights_b: Vec<f64>,
    pub layer_weights_c: Vec<f64>,
    /// Task-balance coefficients of the total loss.
    pub c1: f64,
    pub c2: f64,
    /// Anchor w/h ratio bound for assignment.
    pub anchor_ratio_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_loc: 0.05,
            lambda_obj: 1.0,
            lambda_cls: None,
            layer_weights_a: vec![1.0],
            layer_weights_b: vec![1.0],
            layer_weights_c: vec![1.0],
            c1: 1.0,
            c2: 1.0,
            anchor_ratio_threshold: 4.0,
        }
    }
}

impl LossConfig {
    /// Family defaults for an n-detector head.
    pub fn for_detectors(n: usize) -> Self {
        LossConfig {
            layer_weights_a: vec![1.0; n],
            layer_weights_b: if n == 3 {
                vec![4.0, 1.0, 0.4]
            } else {
                vec![1.0; n]
            },
            layer_weights_c: vec![1.0; n],
            ..Default::default()
        }
    }

    pub fn lambda_cls_for(&self, n_classes: usize) -> f64 {
        self.lambda_cls
            .unwrap_or(0.5 * n_classes as f64 / 80.0)
    }

    pub fn validate(&self, n_detectors: usize) -> Result<()> {
        for (k, v) in [
            ("lambda_loc", self.lambda_loc),
            ("lambda_obj", self.lambda_obj),
            ("c1", self.c1),
            ("c2", self.c2),
        ] {
            if v < 0.0 {
                return Err(Error::config(format!("loss.{k}"), "must be >= 0"));
            }
        }
        for (k, ws) in [
            ("layer_weights_a", &self.layer_weights_a),
            ("layer_weights_b", &self.layer_weights_b),
            ("layer_weights_c", &self.layer_weights_c),
        ] {
            if ws.len() != n_detectors {
                return Err(Error::config(
                    format!("loss.{k}"),
                    format!("expected {n_detectors} entries, got {}", ws.len()),
                ));
            }
            if ws.iter().any(|&w| w < 0.0) {
                return Err(Error::config(format!("loss.{k}"), "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// One positive assignment on one scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveTarget {
    pub image: usize,
    pub anchor: usize,
    pub gy: usize,
    pub gx: usize,
    /// Center offset relative to the assigned cell, in (-0.5, 1.5).
    pub tx: f64,
    pub ty: f64,
    /// Box size in grid units.
    pub tw: f64,
    pub th: f64,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct ScaleTargets {
    pub positives: Vec<PositiveTarget>,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Anchor-ratio matching with neighbor-cell expansion: a label matches an
/// anchor when max(wh/anchor, anchor/wh) stays below the ratio bound, and
/// lands in its center cell plus up to two adjacent cells chosen by which
/// side of the cell center it falls on.
pub fn assign_targets(
    labels_per_image: &[Vec<BoundingBoxLabel>],
    cfg: &HeadConfig,
    input_w: usize,
    input_h: usize,
    strides: &[usize],
) -> Vec<ScaleTargets> {
    let mut out = Vec::with_capacity(strides.len());
    for (scale, &stride) in strides.iter().enumerate() {
        let (gw, gh) = (input_w / stride, input_h / stride);
        let anchors = &cfg.anchors[scale];
        let mut positives = Vec::new();
        for (img, labels) in labels_per_image.iter().enumerate() {
            for l in labels {
                let (gx, gy) = (l.cx * gw as f64, l.cy * gh as f64);
                let (tw, th) = (l.w * gw as f64, l.h * gh as f64);
                if tw <= 0.0 || th <= 0.0 {
                    continue;
                }
                for (ai, &(aw_px, ah_px)) in anchors.iter().enumerate() {
                    let (aw, ah) = (aw_px / stride as f64, ah_px / stride as f64);
                    let (rw, rh) = (tw / aw, th / ah);
                    let worst = rw.max(1.0 / rw).max(rh.max(1.0 / rh));
                    if worst >= cfg.anchor_ratio_threshold() {
                        continue;
                    }
                    let mut cells = vec![(gx.floor(), gy.floor())];
                    let (fx_, fy_) = (gx - gx.floor(), gy - gy.floor());
                    if fx_ < 0.5 && gx > 1.0 {
                        cells.push((gx.floor() - 1.0, gy.floor()));
                    } else if fx_ > 0.5 && gx < gw as f64 - 1.0 {
                        cells.push((gx.floor() + 1.0, gy.floor()));
                    }
                    if fy_ < 0.5 && gy > 1.0 {
                        cells.push((gx.floor(), gy.floor() - 1.0));
                    } else if fy_ > 0.5 && gy < gh as f64 - 1.0 {
                        cells.push((gx.floor(), gy.floor() + 1.0));
                    }
                    for (cx, cy) in cells {
                        let (ci, cj) = (
                            (cx as isize).clamp(0, gw as isize - 1) as usize,
                            (cy as isize).clamp(0, gh as isize - 1) as usize,
                        );
                        positives.push(PositiveTarget {
                            image: img,
                            anchor: ai,
                            gy: cj,
                            gx: ci,
                            tx: gx - ci as f64,
                            ty: gy - cj as f64,
                            tw,
                            th,
                            class: l.class_id,
                        });
                    }
                }
            }
        }
        out.push(ScaleTargets {
            positives,
            grid_h: gh,
            grid_w: gw,
        });
    }
    out
}

pub struct LossNodes {
    pub l_loc: NodeId,
    pub l_obj: NodeId,
    pub l_cls: NodeId,
    pub l_o: NodeId,
}

/// Component values of one loss evaluation.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_loc: f64,
    pub l_obj: f64,
    pub l_cls: f64,
    pub l_o: f64,
    pub l_s: f64,
    pub l_total: f64,
}

const EPS: f64 = 1e-9;

/// Build the detection loss graph over raw per-scale outputs.
#[allow(clippy::too_many_arguments)]
pub fn detection_loss(
    fx: &mut Forward,
    raw: &[NodeId],
    targets: &[ScaleTargets],
    cfg: &HeadConfig,
    loss_cfg: &LossConfig,
    strides: &[usize],
    batch: usize,
) -> Result<LossNodes> {
    assert_eq!(raw.len(), targets.len());
    let nc = cfg.n_classes;
    let per = 5 + nc;
    let na = 3;

    for (scale, &r) in raw.iter().enumerate() {
        if !fx.graph.value(r).is_finite() {
            return Err(Error::NonFiniteLoss {
                step: scale,
                detail: format!("non-finite head output on scale {scale} (batch of {batch})"),
            });
        }
    }

    let mut lbox_terms = Vec::new();
    let mut lobj_terms = Vec::new();
    let mut lcls_terms = Vec::new();

    for (scale, (&r, st)) in raw.iter().zip(targets).enumerate() {
        let (gh, gw) = (st.grid_h, st.grid_w);
        let shape = fx.graph.value(r).shape().to_vec();
        assert_eq!(shape[1], na * per, "raw channels");
        assert_eq!((shape[2], shape[3]), (gh, gw), "raw grid");
        let flat = |n: usize, ch: usize, gy: usize, gx: usize| {
            ((n * (na * per) + ch) * gh + gy) * gw + gx
        };

        let p = st.positives.len();
        // objectness target: zero everywhere, IoU credit at positives;
        // the credit stays in the graph so the loss is one differentiable
        // function of the raw predictions
        let mut obj_idx = Vec::with_capacity(shape[0] * na * gh * gw);
        for n in 0..shape[0] {
            for a in 0..na {
                for gy in 0..gh {
                    for gx in 0..gw {
                        obj_idx.push(flat(n, a * per + 4, gy, gx));
                    }
                }
            }
        }
        let obj_pos_offsets: Vec<usize> = st
            .positives
            .iter()
            .map(|t| ((t.image * na + t.anchor) * gh + t.gy) * gw + t.gx)
            .collect();
        let mut obj_credit: Option<NodeId> = None;

        if p > 0 {
            let anchors = &cfg.anchors[scale];
            let stride = strides[scale] as f64;
            let gather_comp = |fx: &mut Forward, comp: usize| {
                let idx: Vec<usize> = st
                    .positives
                    .iter()
                    .map(|t| flat(t.image, t.anchor * per + comp, t.gy, t.gx))
                    .collect();
                autograd::gather(&mut fx.graph, r, Arc::new(idx))
            };
            let const_vec = |fx: &mut Forward, f: &dyn Fn(&PositiveTarget) -> f64| {
                let v: Vec<f64> = st.positives.iter().map(f).collect();
                fx.graph.leaf(Tensor::from_vec(v))
            };

            let tx_raw = gather_comp(fx, 0);
            let ty_raw = gather_comp(fx, 1);
            let tw_raw = gather_comp(fx, 2);
            let th_raw = gather_comp(fx, 3);
            let g = &mut fx.graph;
            let sx = autograd::sigmoid(g, tx_raw);
            let px = autograd::affine(g, sx, 2.0, -0.5);
            let sy = autograd::sigmoid(g, ty_raw);
            let py = autograd::affine(g, sy, 2.0, -0.5);
            let sw = autograd::sigmoid(g, tw_raw);
            let pw_half = autograd::affine(g, sw, 2.0, 0.0);
            let sh = autograd::sigmoid(g, th_raw);
            let ph_half = autograd::affine(g, sh, 2.0, 0.0);
            let pw_sq = autograd::square(g, pw_half);
            let ph_sq = autograd::square(g, ph_half);
            let aw = const_vec(fx, &|t| cfg.anchors[scale][t.anchor].0 / stride);
            let ah = const_vec(fx, &|t| anchors[t.anchor].1 / stride);
            let g = &mut fx.graph;
            let pw = autograd::mul(g, pw_sq, aw);
            let ph = autograd::mul(g, ph_sq, ah);

            // predicted corners
            let pwh2 = autograd::affine(g, pw, 0.5, 0.0);
            let phh2 = autograd::affine(g, ph, 0.5, 0.0);
            let b1x1 = autograd::sub(g, px, pwh2);
            let b1x2 = autograd::add(g, px, pwh2);
            let b1y1 = autograd::sub(g, py, phh2);
            let b1y2 = autograd::add(g, py, phh2);

            // constant target corners and precomputed terms
            let t_x1 = const_vec(fx, &|t| t.tx - t.tw / 2.0);
            let t_x2 = const_vec(fx, &|t| t.tx + t.tw / 2.0);
            let t_y1 = const_vec(fx, &|t| t.ty - t.th / 2.0);
            let t_y2 = const_vec(fx, &|t| t.ty + t.th / 2.0);
            let t_area = const_vec(fx, &|t| t.tw * t.th);
            let t_cx = const_vec(fx, &|t| t.tx);
            let t_cy = const_vec(fx, &|t| t.ty);
            let t_atan = const_vec(fx, &|t| (t.tw / t.th).atan());

            let g = &mut fx.graph;
            let ix1 = autograd::binary_max(g, b1x1, t_x1);
            let ix2 = autograd::binary_min(g, b1x2, t_x2);
            let iy1 = autograd::binary_max(g, b1y1, t_y1);
            let iy2 = autograd::binary_min(g, b1y2, t_y2);
            let iwd = autograd::sub(g, ix2, ix1);
            let iw = autograd::relu(g, iwd);
            let ihd = autograd::sub(g, iy2, iy1);
            let ih = autograd::relu(g, ihd);
            let inter = autograd::mul(g, iw, ih);
            let p_area = autograd::mul(g, pw, ph);
            let areas = autograd::add(g, p_area, t_area);
            let union_raw = autograd::sub(g, areas, inter);
            let union = autograd::affine(g, union_raw, 1.0, EPS);
            let iou = autograd::div(g, inter, union);

            // enclosing box diagonal and center distance
            let ex1 = autograd::binary_min(g, b1x1, t_x1);
            let ex2 = autograd::binary_max(g, b1x2, t_x2);
            let ey1 = autograd::binary_min(g, b1y1, t_y1);
            let ey2 = autograd::binary_max(g, b1y2, t_y2);
            let cw = autograd::sub(g, ex2, ex1);
            let chh = autograd::sub(g, ey2, ey1);
            let cw2 = autograd::square(g, cw);
            let ch2 = autograd::square(g, chh);
            let c2sum = autograd::add(g, cw2, ch2);
            let c2 = autograd::affine(g, c2sum, 1.0, EPS);
            let dx = autograd::sub(g, px, t_cx);
            let dy = autograd::sub(g, py, t_cy);
            let dx2 = autograd::square(g, dx);
            let dy2 = autograd::square(g, dy);
            let rho2 = autograd::add(g, dx2, dy2);
            let rho_term = autograd::div(g, rho2, c2);

            // aspect-ratio consistency term with detached alpha
            let ph_eps = autograd::affine(g, ph, 1.0, EPS);
            let ratio = autograd::div(g, pw, ph_eps);
            let atan_p = autograd::atan(g, ratio);
            let datan = autograd::sub(g, t_atan, atan_p);
            let datan2 = autograd::square(g, datan);
            let v = autograd::affine(g, datan2, 4.0 / (std::f64::consts::PI.powi(2)), 0.0);

            // alpha = v / (v - iou + 1 + eps), differentiated through
            let vmi = autograd::sub(g, v, iou);
            let denom = autograd::affine(g, vmi, 1.0, 1.0 + EPS);
            let alpha = autograd::div(g, v, denom);
            let v_term = autograd::mul(g, v, alpha);
            let penalty = autograd::add(g, rho_term, v_term);
            let ciou = autograd::sub(g, iou, penalty);
            let one_minus = autograd::affine(g, ciou, -1.0, 1.0);
            lbox_terms.push(autograd::mean_all(g, one_minus));

            // objectness credit: clamped CIoU scattered over the grid
            let clamped = autograd::clamp01(g, ciou);
            obj_credit = Some(autograd::scatter(
                g,
                clamped,
                &obj_pos_offsets,
                obj_idx.len(),
            ));

            if nc > 1 {
                let cls_idx: Vec<usize> = st
                    .positives
                    .iter()
                    .flat_map(|t| {
                        (0..nc).map(move |c| flat(t.image, t.anchor * per + 5 + c, t.gy, t.gx))
                    })
                    .collect();
                let tcls: Vec<f64> = st
                    .positives
                    .iter()
                    .flat_map(|t| (0..nc).map(move |c| if c == t.class { 1.0 } else { 0.0 }))
                    .collect();
                let logits = autograd::gather(&mut fx.graph, r, Arc::new(cls_idx));
                lcls_terms.push(autograd::bce_with_logits(
                    &mut fx.graph,
                    logits,
                    Arc::new(Tensor::from_vec(tcls)),
                ));
            }
        }

        let obj_len = obj_idx.len();
        let obj_logits = autograd::gather(&mut fx.graph, r, Arc::new(obj_idx));
        let term = match obj_credit {
            Some(credit) => autograd::bce_with_logits_pair(&mut fx.graph, obj_logits, credit),
            None => autograd::bce_with_logits(
                &mut fx.graph,
                obj_logits,
                Arc::new(Tensor::zeros(&[obj_len])),
            ),
        };
        lobj_terms.push(term);
    }

    // weighted sums over layers
    let zero = fx.graph.leaf(Tensor::scalar(0.0));
    let weighted_sum = |fx: &mut Forward, terms: &[NodeId], weights: &[f64]| -> NodeId {
        let mut acc = zero;
        for (i, &t) in terms.iter().enumerate() {
            let w = weights.get(i).copied().unwrap_or(1.0);
            let g = &mut fx.graph;
            let scaled = autograd::affine(g, t, w, 0.0);
            acc = autograd::add(g, acc, scaled);
        }
        acc
    };
    let l_loc = weighted_sum(fx, &lbox_terms, &loss_cfg.layer_weights_a);
    let l_obj = weighted_sum(fx, &lobj_terms, &loss_cfg.layer_weights_b);
    let l_cls = weighted_sum(fx, &lcls_terms, &loss_cfg.layer_weights_c);

    let lambda_cls = loss_cfg.lambda_cls_for(nc);
    let g = &mut fx.graph;
    let loc_w = autograd::affine(g, l_loc, loss_cfg.lambda_loc, 0.0);
    let obj_w = autograd::affine(g, l_obj, loss_cfg.lambda_obj, 0.0);
    let cls_w = autograd::affine(g, l_cls, lambda_cls, 0.0);
    let partial = autograd::add(g, loc_w, obj_w);
    let l_o = autograd::add(g, partial, cls_w);

    Ok(LossNodes {
        l_loc,
        l_obj,
        l_cls,
        l_o,
    })
}

/// `L_total = c1 * L_o + c2 * L_s`.
pub fn total_loss(fx: &mut Forward, l_o: NodeId, l_s: Option<NodeId>, cfg: &LossConfig) -> NodeId {
    let g = &mut fx.graph;
    let det = autograd::affine(g, l_o, cfg.c1, 0.0);
    match l_s {
        Some(ls) => {
            let sr = autograd::affine(g, ls, cfg.c2, 0.0);
            autograd::add(g, det, sr)
        }
        None => det,
    }
}
