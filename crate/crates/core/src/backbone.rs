//! Focus-free CSP backbone.
//!
//! The layer table follows the published small CSP detector layout (depths
//! scale by `depth_multiple`, widths by `width_multiple`): stem, then four
//! stride-2 CBS stages interleaved with CSP blocks, SPP, and a final
//! shortcut-free CSP block. With the Focus stem disabled (the default) the
//! stem is a stride-1 CBS, so every feature map keeps twice the resolution
//! of the Focus variant; that resolution retention is the point of the
//! design. Module outputs 4 and 9 feed the SR branch as the low/high-level
//! taps; modules 4, 6, 9 feed the head.

use crate::autograd::NodeId;
use crate::nn::{ConvBnSilu, Cost, CspBlock, Focus, Forward, ParamStore, Spp};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Round a scaled width up to a multiple of 8.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    ((v / divisor as f64).ceil() as usize).max(1) * divisor
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub depth_multiple: f64,
    pub width_multiple: f64,
    /// Keep the Focus stem (baseline ablations only).
    pub use_focus: bool,
    /// Stem input channels; ignored when the fusion module provides the
    /// stem-width tensor directly.
    pub in_channels: usize,
    pub spp_kernels: Vec<usize>,
    /// Module index of the low-level SR tap.
    pub tap_low: usize,
    /// Module index of the high-level SR tap.
    pub tap_high: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            depth_multiple: 0.33,
            width_multiple: 0.50,
            use_focus: false,
            in_channels: 3,
            spp_kernels: vec![5, 9, 13],
            tap_low: 4,
            tap_high: 9,
        }
    }
}

impl BackboneConfig {
    pub fn width(&self, base: usize) -> usize {
        make_divisible(base as f64 * self.width_multiple, 8)
    }

    pub fn depth(&self, base: usize) -> usize {
        ((base as f64 * self.depth_multiple).round() as usize).max(1)
    }

    /// Stem output width (the fused tensor must match this).
    pub fn stem_width(&self) -> usize {
        self.width(64)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.33).contains(&self.width_multiple) || self.width_multiple <= 0.0 {
            return Err(crate::Error::config("backbone.width_multiple", "outside (0, 1.33]"));
        }
        if !(0.0..=1.33).contains(&self.depth_multiple) || self.depth_multiple <= 0.0 {
            return Err(crate::Error::config("backbone.depth_multiple", "outside (0, 1.33]"));
        }
        if self.tap_low >= self.tap_high {
            return Err(crate::Error::config("backbone.tap_low", "must precede tap_high"));
        }
        if self.tap_high > 9 {
            return Err(crate::Error::config("backbone.tap_high", "module index out of range"));
        }
        if self.spp_kernels.iter().any(|k| k % 2 == 0) {
            return Err(crate::Error::config("backbone.spp_kernels", "kernels must be odd"));
        }
        if self.spp_kernels.windows(2).any(|p| p[0] >= p[1]) {
            return Err(crate::Error::config("backbone.spp_kernels", "kernels must ascend"));
        }
        Ok(())
    }
}

enum Stem {
    /// Space-to-depth stem (halves resolution).
    Focus(Focus),
    /// Stride-1 CBS replacement (preserves resolution).
    Conv(ConvBnSilu),
    /// The fusion module already produced the stem-width tensor.
    External,
}

enum Module {
    Cbs(ConvBnSilu),
    Csp(CspBlock),
    Spp(Spp),
}

impl Module {
    fn forward(&self, fx: &mut Forward, x: NodeId) -> NodeId {
        match self {
            Module::Cbs(m) => m.forward(fx, x),
            Module::Csp(m) => m.forward(fx, x),
            Module::Spp(m) => m.forward(fx, x),
        }
    }

    fn cost(&self, h: usize, w: usize) -> (Cost, (usize, usize)) {
        match self {
            Module::Cbs(m) => m.cost(h, w),
            Module::Csp(m) => m.cost(h, w),
            Module::Spp(m) => m.cost(h, w),
        }
    }
}

/// Backbone feature taps: every module output, indexed 0 (stem) to 9.
pub struct FeatureTaps {
    pub modules: Vec<NodeId>,
    pub low_level: NodeId,
    pub high_level: NodeId,
    /// Outputs feeding the head pyramid (modules 4, 6, 9).
    pub pyramid: [NodeId; 3],
}

pub struct Backbone {
    pub cfg: BackboneConfig,
    stem: Stem,
    modules: Vec<Module>,
    /// Channel widths of module outputs 0..=9.
    pub widths: [usize; 10],
}

impl Backbone {
    /// `external_stem` means module 0 is produced by the fusion module.
    pub fn new(
        store: &mut ParamStore,
        cfg: BackboneConfig,
        external_stem: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let w64 = cfg.width(64);
        let w128 = cfg.width(128);
        let w256 = cfg.width(256);
        let w512 = cfg.width(512);
        let w1024 = cfg.width(1024);
        let d3 = cfg.depth(3);
        let d9 = cfg.depth(9);

        let stem = if external_stem {
            Stem::External
        } else if cfg.use_focus {
            Stem::Focus(Focus::new(store, "backbone.m0", cfg.in_channels, w64, 3, rng))
        } else {
            Stem::Conv(ConvBnSilu::new(
                store,
                "backbone.m0",
                cfg.in_channels,
                w64,
                3,
                1,
                rng,
            ))
        };

        let modules = vec![
            Module::Cbs(ConvBnSilu::new(store, "backbone.m1", w64, w128, 3, 2, rng)),
            Module::Csp(CspBlock::new(store, "backbone.m2", w128, w128, d3, true, rng)),
            Module::Cbs(ConvBnSilu::new(store, "backbone.m3", w128, w256, 3, 2, rng)),
            Module::Csp(CspBlock::new(store, "backbone.m4", w256, w256, d9, true, rng)),
            Module::Cbs(ConvBnSilu::new(store, "backbone.m5", w256, w512, 3, 2, rng)),
            Module::Csp(CspBlock::new(store, "backbone.m6", w512, w512, d9, true, rng)),
            Module::Cbs(ConvBnSilu::new(store, "backbone.m7", w512, w1024, 3, 2, rng)),
            Module::Spp(Spp::new(store, "backbone.m8", w1024, w1024, &cfg.spp_kernels, rng)),
            Module::Csp(CspBlock::new(store, "backbone.m9", w1024, w1024, d3, false, rng)),
        ];

        Backbone {
            cfg,
            stem,
            modules,
            widths: [w64, w128, w128, w256, w256, w512, w512, w1024, w1024, w1024],
        }
    }

    /// Run the backbone. In external-stem mode `x` is the fused stem-width
    /// tensor; otherwise it is the raw (possibly concatenated) input.
    pub fn forward(&self, fx: &mut Forward, x: NodeId) -> FeatureTaps {
        let m0 = match &self.stem {
            Stem::Focus(f) => f.forward(fx, x),
            Stem::Conv(c) => c.forward(fx, x),
            Stem::External => x,
        };
        let mut outs = Vec::with_capacity(10);
        outs.push(m0);
        let mut cur = m0;
        for m in &self.modules {
            cur = m.forward(fx, cur);
            outs.push(cur);
        }
        FeatureTaps {
            low_level: outs[self.cfg.tap_low],
            high_level: outs[self.cfg.tap_high],
            pyramid: [outs[4], outs[6], outs[9]],
            modules: outs,
        }
    }

    /// Per-module cost rows `(name, cost)` and output dims at each stage.
    pub fn cost_rows(&self, h: usize, w: usize) -> (Vec<(String, Cost)>, Vec<(usize, usize)>) {
        let mut rows = Vec::new();
        let mut dims = Vec::new();
        let (mut ch, mut cw) = (h, w);
        match &self.stem {
            Stem::Focus(f) => {
                let (c, hw) = f.cost(ch, cw);
                rows.push(("backbone.m0".to_string(), c));
                (ch, cw) = hw;
            }
            Stem::Conv(c) => {
                let (c, hw) = c.cost(ch, cw);
                rows.push(("backbone.m0".to_string(), c));
                (ch, cw) = hw;
            }
            Stem::External => {
                rows.push(("backbone.m0".to_string(), Cost::default()));
            }
        }
        dims.push((ch, cw));
        for (i, m) in self.modules.iter().enumerate() {
            let (c, hw) = m.cost(ch, cw);
            rows.push((format!("backbone.m{}", i + 1), c));
            (ch, cw) = hw;
            dims.push((ch, cw));
        }
        (rows, dims)
    }

    pub fn has_external_stem(&self) -> bool {
        matches!(self.stem, Stem::External)
    }
}
