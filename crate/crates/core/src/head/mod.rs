//! Detection head: top-down feature pyramid over the backbone taps, an
//! optional bottom-up path when all three detectors are kept, and 1x1
//! detect convolutions emitting per-anchor box/objectness/class maps.
//! The one-detector variant drops the bottom-up path and the two coarser
//! detectors, keeping only the small-object scale.

pub mod boxes;
pub mod loss;

pub use boxes::{decode_scale, iou_det, iou_xyxy, nms, sort_by_score, Detection};
pub use loss::{
    assign_targets, detection_loss, total_loss, LossBreakdown, LossConfig, LossNodes,
    PositiveTarget, ScaleTargets,
};

use crate::autograd::{self, NodeId};
use crate::backbone::Backbone;
use crate::nn::{Conv2d, ConvBnSilu, Cost, CspBlock, Forward, ParamStore};
use crate::tensor::Tensor;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub const ANCHORS_PER_DETECTOR: usize = 3;

/// Fallback anchors (input pixels), small to large scale.
pub fn default_anchors(n_detectors: usize) -> Vec<Vec<(f64, f64)>> {
    let all = [
        vec![(10.0, 13.0), (16.0, 30.0), (33.0, 23.0)],
        vec![(30.0, 61.0), (62.0, 45.0), (59.0, 119.0)],
        vec![(116.0, 90.0), (156.0, 198.0), (373.0, 326.0)],
    ];
    all[..n_detectors].to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub n_detectors: usize,
    pub n_classes: usize,
    /// Per-detector anchor boxes in input pixels.
    pub anchors: Vec<Vec<(f64, f64)>>,
    /// Score floor used by evaluation (kept permissive for PR sweeps).
    pub conf_threshold_eval: f64,
    /// Score floor used by the detect command.
    pub conf_threshold_detect: f64,
    pub nms_iou_threshold: f64,
    pub anchor_ratio_threshold: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            n_detectors: 1,
            n_classes: 8,
            anchors: default_anchors(1),
            conf_threshold_eval: 0.001,
            conf_threshold_detect: 0.25,
            nms_iou_threshold: 0.6,
            anchor_ratio_threshold: 4.0,
        }
    }
}

impl HeadConfig {
    pub fn anchor_ratio_threshold(&self) -> f64 {
        self.anchor_ratio_threshold
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.n_detectors == 1 || self.n_detectors == 3) {
            return Err(crate::Error::config("head.n_detectors", "must be 1 or 3"));
        }
        if self.anchors.len() != self.n_detectors {
            return Err(crate::Error::config(
                "head.anchors",
                format!(
                    "expected {} anchor sets, got {}",
                    self.n_detectors,
                    self.anchors.len()
                ),
            ));
        }
        if self.anchors.iter().any(|a| a.len() != ANCHORS_PER_DETECTOR) {
            return Err(crate::Error::config(
                "head.anchors",
                "each detector takes exactly 3 anchors",
            ));
        }
        for (k, t) in [
            ("conf_threshold_eval", self.conf_threshold_eval),
            ("conf_threshold_detect", self.conf_threshold_detect),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..1.0).contains(&t) {
                return Err(crate::Error::config(format!("head.{k}"), "outside (0,1)"));
            }
        }
        Ok(())
    }
}

struct PanPart {
    cv18: ConvBnSilu,
    c20: CspBlock,
    cv21: ConvBnSilu,
    c23: CspBlock,
}

pub struct Head {
    pub cfg: HeadConfig,
    cv10: ConvBnSilu,
    c13: CspBlock,
    cv14: ConvBnSilu,
    c17: CspBlock,
    pan: Option<PanPart>,
    detect: Vec<Conv2d>,
}

impl Head {
    /// `strides` are the real detector strides, used for the objectness
    /// bias prior together with the nominal training image size.
    pub fn new(
        store: &mut ParamStore,
        cfg: HeadConfig,
        backbone: &Backbone,
        strides: &[usize],
        image_size_hint: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let bcfg = &backbone.cfg;
        let w256 = bcfg.width(256);
        let w512 = bcfg.width(512);
        let w1024 = bcfg.width(1024);
        let d3 = bcfg.depth(3);
        let nc = cfg.n_classes;
        let out_ch = ANCHORS_PER_DETECTOR * (5 + nc);

        let cv10 = ConvBnSilu::new(store, "head.m10", w1024, w512, 1, 1, rng);
        let c13 = CspBlock::new(store, "head.m13", 2 * w512, w512, d3, false, rng);
        let cv14 = ConvBnSilu::new(store, "head.m14", w512, w256, 1, 1, rng);
        let c17 = CspBlock::new(store, "head.m17", 2 * w256, w256, d3, false, rng);

        let pan = (cfg.n_detectors == 3).then(|| PanPart {
            cv18: ConvBnSilu::new(store, "head.m18", w256, w256, 3, 2, rng),
            c20: CspBlock::new(store, "head.m20", 2 * w256, w512, d3, false, rng),
            cv21: ConvBnSilu::new(store, "head.m21", w512, w512, 3, 2, rng),
            c23: CspBlock::new(store, "head.m23", 2 * w512, w1024, d3, false, rng),
        });

        let in_widths: Vec<usize> = match cfg.n_detectors {
            1 => vec![w256],
            _ => vec![w256, w512, w1024],
        };
        let detect: Vec<Conv2d> = in_widths
            .iter()
            .enumerate()
            .map(|(i, &cin)| {
                let conv = Conv2d::new(store, &format!("head.detect{i}"), cin, out_ch, 1, 1, true, rng);
                // objectness/class bias priors stabilize early training
                let stride = strides.get(i).copied().unwrap_or(4);
                let cells = (image_size_hint as f64 / stride as f64).powi(2);
                let bias = store.tensor_mut(conv.bias.unwrap());
                for a in 0..ANCHORS_PER_DETECTOR {
                    let base = a * (5 + nc);
                    bias.data_mut()[base + 4] += (8.0 / cells).ln();
                    if nc > 1 {
                        for c in 0..nc {
                            bias.data_mut()[base + 5 + c] += (0.6 / (nc as f64 - 0.99)).ln();
                        }
                    }
                }
                conv
            })
            .collect();

        Head {
            cfg,
            cv10,
            c13,
            cv14,
            c17,
            pan,
            detect,
        }
    }

    /// Raw per-detector grids from the backbone module outputs.
    pub fn forward(&self, fx: &mut Forward, modules: &[NodeId]) -> Vec<NodeId> {
        let x10 = self.cv10.forward(fx, modules[9]);
        let up = autograd::upsample_nearest(&mut fx.graph, x10, 2);
        let cat = autograd::concat_channels(&mut fx.graph, &[up, modules[6]]);
        let x13 = self.c13.forward(fx, cat);
        let x14 = self.cv14.forward(fx, x13);
        let up2 = autograd::upsample_nearest(&mut fx.graph, x14, 2);
        let cat2 = autograd::concat_channels(&mut fx.graph, &[up2, modules[4]]);
        let x17 = self.c17.forward(fx, cat2);

        match &self.pan {
            None => vec![self.detect[0].forward(fx, x17)],
            Some(pan) => {
                let x18 = pan.cv18.forward(fx, x17);
                let cat3 = autograd::concat_channels(&mut fx.graph, &[x18, x14]);
                let x20 = pan.c20.forward(fx, cat3);
                let x21 = pan.cv21.forward(fx, x20);
                let cat4 = autograd::concat_channels(&mut fx.graph, &[x21, x10]);
                let x23 = pan.c23.forward(fx, cat4);
                vec![
                    self.detect[0].forward(fx, x17),
                    self.detect[1].forward(fx, x20),
                    self.detect[2].forward(fx, x23),
                ]
            }
        }
    }

    /// Cost rows given the spatial dims of backbone modules 4, 6, 9.
    pub fn cost_rows(&self, dims: &[(usize, usize)]) -> Vec<(String, Cost)> {
        let (h4, w4) = dims[4];
        let (h6, w6) = dims[6];
        let (h9, w9) = dims[9];
        let mut rows = Vec::new();
        let mut push = |name: &str, c: Cost| rows.push((name.to_string(), c));
        push("head.m10", self.cv10.cost(h9, w9).0);
        push("head.m13", self.c13.cost(h6, w6).0);
        push("head.m14", self.cv14.cost(h6, w6).0);
        push("head.m17", self.c17.cost(h4, w4).0);
        if let Some(pan) = &self.pan {
            push("head.m18", pan.cv18.cost(h4, w4).0);
            push("head.m20", pan.c20.cost(h6, w6).0);
            push("head.m21", pan.cv21.cost(h6, w6).0);
            push("head.m23", pan.c23.cost(h9, w9).0);
            push("head.detect0", self.detect[0].cost(h4, w4).0);
            push("head.detect1", self.detect[1].cost(h6, w6).0);
            push("head.detect2", self.detect[2].cost(h9, w9).0);
        } else {
            push("head.detect0", self.detect[0].cost(h4, w4).0);
        }
        rows
    }

    /// Decode one image's raw grids into detections, NMS applied.
    pub fn decode_detections(
        &self,
        raw: &[Tensor],
        image: usize,
        strides: &[usize],
        conf_threshold: f64,
        input_w: usize,
        input_h: usize,
    ) -> Vec<Detection> {
        let mut all = Vec::new();
        for (scale, r) in raw.iter().enumerate() {
            all.extend(decode_scale(
                r,
                image,
                &self.cfg.anchors[scale],
                strides[scale] as f64,
                self.cfg.n_classes,
                conf_threshold,
                input_w as f64,
                input_h as f64,
            ));
        }
        sort_by_score(&mut all);
        nms(&all, self.cfg.nms_iou_threshold)
    }
}

/// Serialize detections in the exchange text format:
/// `image_id class score x1 y1 x2 y2` per line.
pub fn serialize_detections(image_id: &str, dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        s.push_str(&format!(
            "{image_id} {} {:.6} {:.2} {:.2} {:.2} {:.2}\n",
            d.class_id, d.score, d.x1, d.y1, d.x2, d.y2
        ));
    }
    s
}
