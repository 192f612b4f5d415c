//! Auxiliary super-resolution branch.
//!
//! Encoder: a CR module on the low-level backbone tap, nearest-upsampled
//! high-level tap, channel concat, then either two CR modules (plain) or a
//! small EDSR residual stack (no batch norm). Decoder: three stride-2
//! transposed convolutions, so the stride-4 encoder grid comes out at twice
//! the LR input size. Present only in training graphs; the exporter strips
//! the whole `sr.*` namespace.

use crate::autograd::{self, NodeId};
use crate::nn::{Conv2d, ConvRelu, Cost, Deconv, Forward, ParamStore};
use crate::tensor::Tensor;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Plain,
    Edsr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrLossKind {
    L1,
    L2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrConfig {
    pub encoder: EncoderKind,
    pub edsr_n_resblocks: usize,
    pub edsr_width: usize,
    pub loss: SrLossKind,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            encoder: EncoderKind::Edsr,
            edsr_n_resblocks: 8,
            edsr_width: 64,
            loss: SrLossKind::L1,
        }
    }
}

/// Decoder channel schedule, fixed: 128 -> 64 -> 32 -> 3.
const DECODER_WIDTHS: [usize; 4] = [128, 64, 32, 3];

struct EdsrBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl EdsrBlock {
    fn new(store: &mut ParamStore, path: &str, width: usize, rng: &mut ChaCha12Rng) -> Self {
        EdsrBlock {
            conv1: Conv2d::new(store, &format!("{path}.conv1"), width, width, 3, 1, true, rng),
            conv2: Conv2d::new(store, &format!("{path}.conv2"), width, width, 3, 1, true, rng),
        }
    }

    fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        let y = self.conv1.forward(fx, x);
        let y = autograd::relu(&mut fx.graph, y);
        let y = self.conv2.forward(fx, y);
        autograd::add(&mut fx.graph, x, y)
    }

    fn cost(&self, h: usize, w: usize) -> Cost {
        let (mut c, _) = self.conv1.cost(h, w);
        c.pointwise += (self.conv1.out_c * h * w) as u128;
        c.add(self.conv2.cost(h, w).0);
        c.pointwise += (self.conv2.out_c * h * w) as u128;
        c
    }
}

enum Encoder {
    Plain { cr1: ConvRelu, cr2: ConvRelu },
    Edsr { head: Conv2d, blocks: Vec<EdsrBlock>, tail: Conv2d },
}

pub struct SrBranch {
    pub cfg: SrConfig,
    cr_low: ConvRelu,
    encoder: Encoder,
    dec1: Deconv,
    dec2: Deconv,
    dec3: Deconv,
    low_c: usize,
    high_c: usize,
}

impl SrBranch {
    pub fn new(
        store: &mut ParamStore,
        cfg: SrConfig,
        low_c: usize,
        high_c: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let low_half = low_c / 2;
        let cat_c = low_half + high_c;
        let cr_low = ConvRelu::new(store, "sr.encoder.cr_low", low_c, low_half, 3, rng);
        let encoder = match cfg.encoder {
            EncoderKind::Plain => Encoder::Plain {
                cr1: ConvRelu::new(store, "sr.encoder.cr1", cat_c, DECODER_WIDTHS[0], 3, rng),
                cr2: ConvRelu::new(
                    store,
                    "sr.encoder.cr2",
                    DECODER_WIDTHS[0],
                    DECODER_WIDTHS[0],
                    3,
                    rng,
                ),
            },
            EncoderKind::Edsr => {
                let w = cfg.edsr_width;
                Encoder::Edsr {
                    head: Conv2d::new(store, "sr.encoder.head", cat_c, w, 3, 1, true, rng),
                    blocks: (0..cfg.edsr_n_resblocks)
                        .map(|i| EdsrBlock::new(store, &format!("sr.encoder.block{i}"), w, rng))
                        .collect(),
                    tail: Conv2d::new(store, "sr.encoder.tail", w, DECODER_WIDTHS[0], 3, 1, true, rng),
                }
            }
        };
        SrBranch {
            cfg,
            cr_low,
            encoder,
            dec1: Deconv::new(store, "sr.decoder.up1", DECODER_WIDTHS[0], DECODER_WIDTHS[1], 2, 2, rng),
            dec2: Deconv::new(store, "sr.decoder.up2", DECODER_WIDTHS[1], DECODER_WIDTHS[2], 2, 2, rng),
            dec3: Deconv::new(store, "sr.decoder.up3", DECODER_WIDTHS[2], DECODER_WIDTHS[3], 2, 2, rng),
            low_c,
            high_c,
        }
    }

    /// Merge the taps into a stride-4-grid feature.
    pub fn encode(&self, fx: &mut Forward, low: NodeId, high: NodeId) -> NodeId {
        let ls = fx.graph.value(low).shape().to_vec();
        let hs = fx.graph.value(high).shape().to_vec();
        assert_eq!(ls[1], self.low_c, "low tap channel mismatch");
        assert_eq!(hs[1], self.high_c, "high tap channel mismatch");
        assert!(
            ls[2] % hs[2] == 0 && ls[3] % hs[3] == 0 && ls[2] / hs[2] == ls[3] / hs[3],
            "tap strides incompatible: {ls:?} vs {hs:?}"
        );
        let factor = ls[2] / hs[2];
        let low_f = self.cr_low.forward(fx, low);
        let high_up = autograd::upsample_nearest(&mut fx.graph, high, factor);
        let cat = autograd::concat_channels(&mut fx.graph, &[low_f, high_up]);
        match &self.encoder {
            Encoder::Plain { cr1, cr2 } => {
                let y = cr1.forward(fx, cat);
                cr2.forward(fx, y)
            }
            Encoder::Edsr { head, blocks, tail } => {
                let mut y = head.forward(fx, cat);
                let head_out = y;
                for b in blocks {
                    y = b.forward(fx, y);
                }
                // EDSR global residual around the block stack
                let y = autograd::add(&mut fx.graph, y, head_out);
                tail.forward(fx, y)
            }
        }
    }

    /// Three stride-2 transposed convolutions; ReLU between stages, linear
    /// output (targets live in [0,1], compared through the loss).
    pub fn decode(&self, fx: &mut Forward, feature: NodeId) -> NodeId {
        let y = self.dec1.forward(fx, feature);
        let y = autograd::relu(&mut fx.graph, y);
        let y = self.dec2.forward(fx, y);
        let y = autograd::relu(&mut fx.graph, y);
        self.dec3.forward(fx, y)
    }

    pub fn forward(&self, fx: &mut Forward, low: NodeId, high: NodeId) -> NodeId {
        let enc = self.encode(fx, low, high);
        self.decode(fx, enc)
    }

    pub fn cost(&self, low_hw: (usize, usize), high_hw: (usize, usize)) -> Cost {
        let mut c = Cost::default();
        let (lh, lw) = low_hw;
        c.add(self.cr_low.cost(lh, lw).0);
        let factor = lh / high_hw.0;
        c.pointwise += (self.high_c * high_hw.0 * factor * high_hw.1 * factor) as u128;
        match &self.encoder {
            Encoder::Plain { cr1, cr2 } => {
                c.add(cr1.cost(lh, lw).0);
                c.add(cr2.cost(lh, lw).0);
            }
            Encoder::Edsr { head, blocks, tail } => {
                c.add(head.cost(lh, lw).0);
                for b in blocks {
                    c.add(b.cost(lh, lw));
                }
                c.pointwise += (self.cfg.edsr_width * lh * lw) as u128;
                c.add(tail.cost(lh, lw).0);
            }
        }
        let (c1, hw) = self.dec1.cost(lh, lw);
        c.add(c1);
        c.pointwise += (self.dec1.out_c * hw.0 * hw.1) as u128;
        let (c2, hw) = self.dec2.cost(hw.0, hw.1);
        c.add(c2);
        c.pointwise += (self.dec2.out_c * hw.0 * hw.1) as u128;
        let (c3, _) = self.dec3.cost(hw.0, hw.1);
        c.add(c3);
        c
    }
}

/// Reconstruction loss between the SR output node and the HR target.
pub fn sr_loss(
    fx: &mut Forward,
    sr: NodeId,
    target: Arc<Tensor>,
    kind: SrLossKind,
) -> NodeId {
    match kind {
        SrLossKind::L1 => autograd::l1_loss(&mut fx.graph, sr, target),
        SrLossKind::L2 => autograd::mse_loss(&mut fx.graph, sr, target),
    }
}
