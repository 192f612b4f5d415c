//! Pixel-level multimodal fusion (MF).
//!
//! Both normalized LR modalities pass through SE channel gates; 1x1
//! convolutions form single-channel spatial attention maps; each modality's
//! gated feature is recombined with its raw input through another 1x1
//! projection; the two halves concatenate into the backbone-width output,
//! gated once more by SE. All convolutions are 1x1, so the module is
//! spatially equivariant.

use crate::autograd::{self, NodeId};
use crate::nn::{Conv2d, Cost, Forward, ParamStore, SeBlock};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfConfig {
    pub se_reduction: usize,
    /// Output width; matches the backbone stem so the fused tensor drops
    /// into the stem position without adaptation.
    pub out_channels: usize,
    /// Swap the attention pairing so each modality is gated by the other's
    /// map. The printed equations gate each modality with its own map;
    /// this flag exists because the figure can be read either way.
    pub cross_gate: bool,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            se_reduction: 16,
            out_channels: 32,
            cross_gate: false,
        }
    }
}

/// All intermediates of one fusion pass, for tests and inspection.
pub struct MfTrace {
    pub f_rgb: NodeId,
    pub f_ir: NodeId,
    pub m_rgb: NodeId,
    pub m_ir: NodeId,
    pub f_in1: NodeId,
    pub f_in2: NodeId,
    pub f_ful1: NodeId,
    pub f_ful2: NodeId,
    pub f_o: NodeId,
}

pub struct MfFusion {
    pub cfg: MfConfig,
    se_rgb: SeBlock,
    se_ir: SeBlock,
    /// 1x1 producing the IR attention map from the IR feature.
    f1: Conv2d,
    /// 1x1 producing the RGB attention map from the RGB feature.
    f2: Conv2d,
    f3: Conv2d,
    f4: Conv2d,
    se_out: SeBlock,
}

impl MfFusion {
    pub fn new(
        store: &mut ParamStore,
        cfg: MfConfig,
        rng: &mut rand_chacha::ChaCha12Rng,
    ) -> Self {
        assert!(cfg.out_channels >= 2, "fusion output needs two halves");
        let half = cfg.out_channels / 2;
        MfFusion {
            se_rgb: SeBlock::new(store, "fusion.se_rgb", 3, cfg.se_reduction, rng),
            se_ir: SeBlock::new(store, "fusion.se_ir", 1, cfg.se_reduction, rng),
            f1: Conv2d::new(store, "fusion.f1", 1, 1, 1, 1, true, rng),
            f2: Conv2d::new(store, "fusion.f2", 3, 1, 1, 1, true, rng),
            f3: Conv2d::new(store, "fusion.f3", 3, half, 1, 1, true, rng),
            f4: Conv2d::new(store, "fusion.f4", 1, cfg.out_channels - half, 1, 1, true, rng),
            se_out: SeBlock::new(store, "fusion.se_out", cfg.out_channels, cfg.se_reduction, rng),
            cfg,
        }
    }

    /// Fuse batched LR inputs `rgb: [N,3,H,W]`, `ir: [N,1,H,W]`.
    pub fn forward(&self, fx: &mut Forward, rgb: NodeId, ir: NodeId) -> MfTrace {
        let f_rgb = self.se_rgb.forward(fx, rgb);
        let f_ir = self.se_ir.forward(fx, ir);
        let m_ir = self.f1.forward(fx, f_ir);
        let m_rgb = self.f2.forward(fx, f_rgb);
        let (gate_rgb, gate_ir) = if self.cfg.cross_gate {
            (m_ir, m_rgb)
        } else {
            (m_rgb, m_ir)
        };
        // broadcast the single-channel map over the three RGB channels
        let gate_rgb3 = autograd::concat_channels(&mut fx.graph, &[gate_rgb, gate_rgb, gate_rgb]);
        let f_in1 = autograd::mul(&mut fx.graph, gate_rgb3, f_rgb);
        let f_in2 = autograd::mul(&mut fx.graph, gate_ir, f_ir);
        let sum1 = autograd::add(&mut fx.graph, f_in1, rgb);
        let sum2 = autograd::add(&mut fx.graph, f_in2, ir);
        let f_ful1 = self.f3.forward(fx, sum1);
        let f_ful2 = self.f4.forward(fx, sum2);
        let cat = autograd::concat_channels(&mut fx.graph, &[f_ful1, f_ful2]);
        let f_o = self.se_out.forward(fx, cat);
        MfTrace {
            f_rgb,
            f_ir,
            m_rgb,
            m_ir,
            f_in1,
            f_in2,
            f_ful1,
            f_ful2,
            f_o,
        }
    }

    pub fn cost(&self, h: usize, w: usize) -> Cost {
        let mut c = Cost::default();
        c.add(self.se_rgb.cost(h, w));
        c.add(self.se_ir.cost(h, w));
        for conv in [&self.f1, &self.f2, &self.f3, &self.f4] {
            c.add(conv.cost(h, w).0);
        }
        // attention multiplies and the two residual adds
        c.pointwise += (3 + 1 + 3 + 1) * (h * w) as u128;
        c.add(self.se_out.cost(h, w));
        c
    }
}

/// Parameter-free pixel-level fusion baseline: channel concatenation.
pub fn concat_fuse(fx: &mut Forward, rgb: NodeId, ir: NodeId) -> NodeId {
    autograd::concat_channels(&mut fx.graph, &[rgb, ir])
}
