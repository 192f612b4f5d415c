//! Full model assembly: input fusion, backbone, head, and the training-only
//! SR branch, with presets matching the published configurations.

use crate::backbone::{Backbone, BackboneConfig};
use crate::data::labels::BoundingBoxLabel;
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::fusion::{concat_fuse, MfConfig, MfFusion, MfTrace};
use crate::head::{default_anchors, Head, HeadConfig};
use crate::metrics::complexity::{row, ComplexityReport, ComplexityRow};
use crate::nn::{Forward, ParamStore};
use crate::sr::{SrBranch, SrConfig};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// RGB + IR through the learned pixel-level fusion module.
    RgbIrMf,
    /// RGB + IR by plain channel concatenation (ablation baseline).
    RgbIrConcat,
    Rgb,
    Ir,
}

impl InputMode {
    pub fn stem_in_channels(&self) -> usize {
        match self {
            InputMode::RgbIrMf => 0, // fusion supplies the stem tensor
            InputMode::RgbIrConcat => 4,
            InputMode::Rgb => 3,
            InputMode::Ir => 1,
        }
    }

    pub fn uses_ir(&self) -> bool {
        !matches!(self, InputMode::Rgb)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_mode: InputMode,
    pub n_classes: usize,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub mf: MfConfig,
    pub sr_enabled: bool,
    pub sr: SrConfig,
    /// Weight initialization seed.
    pub init_seed: u64,
    /// Nominal training input size (LR); used for bias priors.
    pub image_size_hint: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_mode: InputMode::RgbIrMf,
            n_classes: 8,
            backbone: BackboneConfig::default(),
            head: HeadConfig::default(),
            mf: MfConfig::default(),
            sr_enabled: true,
            sr: SrConfig::default(),
            init_seed: 0,
            image_size_hint: 512,
        }
    }
}

impl ModelConfig {
    /// The full multimodal configuration: fused input, one detector,
    /// SR branch during training.
    pub fn superyolo(n_classes: usize) -> Self {
        ModelConfig {
            n_classes,
            head: HeadConfig {
                n_classes,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Unimodal variant (RGB or IR input), otherwise identical.
    pub fn superyolo_unimodal(n_classes: usize, mode: InputMode) -> Self {
        assert!(matches!(mode, InputMode::Rgb | InputMode::Ir));
        ModelConfig {
            input_mode: mode,
            ..Self::superyolo(n_classes)
        }
    }

    /// Concatenation-fused one-detector ablation configuration.
    pub fn superyolo_concat(n_classes: usize) -> Self {
        ModelConfig {
            input_mode: InputMode::RgbIrConcat,
            ..Self::superyolo(n_classes)
        }
    }

    /// Concat-fused three-detector baseline with the Focus stem.
    pub fn baseline_focus(n_classes: usize) -> Self {
        ModelConfig {
            input_mode: InputMode::RgbIrConcat,
            backbone: BackboneConfig {
                use_focus: true,
                ..Default::default()
            },
            head: HeadConfig {
                n_detectors: 3,
                n_classes,
                anchors: default_anchors(3),
                ..Default::default()
            },
            sr_enabled: false,
            ..Self::superyolo(n_classes)
        }
    }

    /// Concat-fused three-detector baseline with the CBS stem.
    pub fn baseline_nofocus(n_classes: usize) -> Self {
        let mut cfg = Self::baseline_focus(n_classes);
        cfg.backbone.use_focus = false;
        cfg
    }

    pub fn preset(name: &str, n_classes: usize) -> Result<Self> {
        Ok(match name {
            "superyolo" => Self::superyolo(n_classes),
            "superyolo-rgb" => Self::superyolo_unimodal(n_classes, InputMode::Rgb),
            "superyolo-ir" => Self::superyolo_unimodal(n_classes, InputMode::Ir),
            "superyolo-concat" => Self::superyolo_concat(n_classes),
            "baseline-focus" => Self::baseline_focus(n_classes),
            "baseline-nofocus" => Self::baseline_nofocus(n_classes),
            other => {
                return Err(Error::config(
                    "model.preset",
                    format!(
                        "unknown preset {other:?}; expected superyolo, superyolo-rgb, \
                         superyolo-ir, superyolo-concat, baseline-focus, baseline-nofocus"
                    ),
                ))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::config("model.n_classes", "need at least one class"));
        }
        if self.head.n_classes != self.n_classes {
            return Err(Error::config(
                "model.head.n_classes",
                "must match model.n_classes",
            ));
        }
        self.backbone.validate()?;
        self.head.validate()?;
        Ok(())
    }
}

/// One training/evaluation batch, already downsampled to network input.
pub struct Batch {
    pub rgb: Tensor,
    pub ir: Tensor,
    /// HR reconstruction target (RGB modality).
    pub hr_rgb: Option<Tensor>,
    pub labels: Vec<Vec<BoundingBoxLabel>>,
    pub ids: Vec<String>,
}

impl Batch {
    /// Downsample HR pairs by `n` and stack into batch tensors. The HR RGB
    /// raster is retained as the SR target when `keep_hr` is set.
    pub fn from_pairs(
        items: &[(&ImagePair, &[BoundingBoxLabel])],
        n: usize,
        keep_hr: bool,
    ) -> Result<Batch> {
        assert!(!items.is_empty());
        let (h, w) = (items[0].0.height, items[0].0.width);
        let count = items.len();
        let (lh, lw) = (h / n, w / n);
        let mut rgb = Tensor::zeros(&[count, 3, lh, lw]);
        let mut ir = Tensor::zeros(&[count, 1, lh, lw]);
        let mut hr = keep_hr.then(|| Tensor::zeros(&[count, 3, h, w]));
        let mut labels = Vec::with_capacity(count);
        let mut ids = Vec::with_capacity(count);
        for (i, (pair, ls)) in items.iter().enumerate() {
            if pair.height != h || pair.width != w {
                return Err(Error::Shape("batch images must share dimensions".into()));
            }
            pair.check_divisibility(n)?;
            let lr = pair.to_lr(n)?;
            rgb.data_mut()[i * 3 * lh * lw..(i + 1) * 3 * lh * lw]
                .copy_from_slice(lr.rgb_lr.data());
            ir.data_mut()[i * lh * lw..(i + 1) * lh * lw].copy_from_slice(lr.ir_lr.data());
            if let Some(hr) = hr.as_mut() {
                hr.data_mut()[i * 3 * h * w..(i + 1) * 3 * h * w].copy_from_slice(pair.rgb.data());
            }
            labels.push(ls.to_vec());
            ids.push(pair.id.clone());
        }
        Ok(Batch {
            rgb,
            ir,
            hr_rgb: hr,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn input_hw(&self) -> (usize, usize) {
        (self.rgb.shape()[2], self.rgb.shape()[3])
    }
}

/// Everything produced by one forward pass.
pub struct ForwardPass<'a> {
    pub fx: Forward<'a>,
    pub raw: Vec<crate::autograd::NodeId>,
    pub sr_out: Option<crate::autograd::NodeId>,
    pub trace: Option<MfTrace>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub fusion: Option<MfFusion>,
    pub backbone: Backbone,
    pub head: Head,
    pub sr: Option<SrBranch>,
}

impl Model {
    pub fn new(mut cfg: ModelConfig) -> Result<Model> {
        // derive coupled fields before validation
        cfg.head.n_classes = cfg.n_classes;
        cfg.backbone.in_channels = match cfg.input_mode {
            InputMode::RgbIrMf => cfg.backbone.stem_width(),
            m => m.stem_in_channels(),
        };
        cfg.mf.out_channels = cfg.backbone.stem_width();
        cfg.validate()?;

        let mut rng = ChaCha12Rng::seed_from_u64(cfg.init_seed);
        let mut store = ParamStore::new();
        let fusion = matches!(cfg.input_mode, InputMode::RgbIrMf)
            .then(|| MfFusion::new(&mut store, cfg.mf.clone(), &mut rng));
        let backbone = Backbone::new(
            &mut store,
            cfg.backbone.clone(),
            fusion.is_some(),
            &mut rng,
        );
        let strides = strides_for(&cfg.backbone);
        let head = Head::new(
            &mut store,
            cfg.head.clone(),
            &backbone,
            &strides,
            cfg.image_size_hint,
            &mut rng,
        );
        let sr = cfg.sr_enabled.then(|| {
            SrBranch::new(
                &mut store,
                cfg.sr.clone(),
                backbone.widths[cfg.backbone.tap_low],
                backbone.widths[cfg.backbone.tap_high],
                &mut rng,
            )
        });
        Ok(Model {
            cfg,
            store,
            fusion,
            backbone,
            head,
            sr,
        })
    }

    /// Real detector strides (stride-1 stem halves these vs the Focus stem).
    pub fn strides(&self) -> Vec<usize> {
        let all = strides_for(&self.cfg.backbone);
        match self.cfg.head.n_detectors {
            1 => vec![all[0]],
            _ => all,
        }
    }

    /// Run the network. `with_sr` adds the SR decode when the branch exists.
    pub fn forward(
        &self,
        batch: &Batch,
        train: bool,
        track_grads: bool,
        with_sr: bool,
    ) -> ForwardPass<'_> {
        let mut fx = Forward::new(&self.store, train, track_grads);
        let rgb = fx.input(batch.rgb.clone());
        let ir = fx.input(batch.ir.clone());
        let (stem_in, trace) = match self.cfg.input_mode {
            InputMode::RgbIrMf => {
                let t = self.fusion.as_ref().unwrap().forward(&mut fx, rgb, ir);
                (t.f_o, Some(t))
            }
            InputMode::RgbIrConcat => (concat_fuse(&mut fx, rgb, ir), None),
            InputMode::Rgb => (rgb, None),
            InputMode::Ir => (ir, None),
        };
        let taps = self.backbone.forward(&mut fx, stem_in);
        let raw = self.head.forward(&mut fx, &taps.modules);
        let sr_out = (with_sr && self.sr.is_some())
            .then(|| {
                self.sr
                    .as_ref()
                    .unwrap()
                    .forward(&mut fx, taps.low_level, taps.high_level)
            });
        ForwardPass {
            fx,
            raw,
            sr_out,
            trace,
        }
    }

    /// Per-module complexity at a square input size.
    pub fn complexity(&self, input_size: usize) -> ComplexityReport {
        let mut rows: Vec<ComplexityRow> = Vec::new();
        if let Some(f) = &self.fusion {
            rows.push(row(
                "fusion",
                self.store.count_trainable(Some("fusion.")),
                f.cost(input_size, input_size),
                false,
            ));
        }
        let (bb_rows, dims) = self.backbone.cost_rows(input_size, input_size);
        for (name, cost) in bb_rows {
            let params = self.store.count_trainable(Some(&format!("{name}.")));
            rows.push(row(name, params, cost, false));
        }
        for (name, cost) in self.head.cost_rows(&dims) {
            let params = self.store.count_trainable(Some(&format!("{name}.")));
            rows.push(row(name, params, cost, false));
        }
        if let Some(sr) = &self.sr {
            let low = dims[self.cfg.backbone.tap_low];
            let high = dims[self.cfg.backbone.tap_high];
            rows.push(row(
                "sr",
                self.store.count_trainable(Some("sr.")),
                sr.cost(low, high),
                true,
            ));
        }
        ComplexityReport::from_rows(input_size, rows)
    }

    /// Trainable parameters of the inference graph (SR excluded).
    pub fn inference_params(&self) -> usize {
        self.store.count_trainable(None) - self.store.count_trainable(Some("sr."))
    }

    /// Rebuild without the SR branch, copying every non-SR weight.
    pub fn export_inference(&self) -> Result<Model> {
        let mut cfg = self.cfg.clone();
        cfg.sr_enabled = false;
        let mut out = Model::new(cfg)?;
        let names: Vec<String> = out.store.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names {
            let src = self
                .store
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing source weight {name}")))?;
            let dst = out.store.id_of(&name).unwrap();
            *out.store.tensor_mut(dst) = self.store.tensor(src).clone();
        }
        Ok(out)
    }
}

fn strides_for(cfg: &BackboneConfig) -> Vec<usize> {
    let stem = if cfg.use_focus { 2 } else { 1 };
    vec![stem * 4, stem * 8, stem * 16]
}

/// Zero-cost helper so complexity can be reported without instantiating
/// weights twice.
pub fn preset_complexity(preset: &str, n_classes: usize, input_size: usize) -> Result<ComplexityReport> {
    let model = Model::new(ModelConfig::preset(preset, n_classes)?)?;
    Ok(model.complexity(input_size))
}
