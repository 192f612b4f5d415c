//! Training loop (SGD with Nesterov momentum, warmup + cosine schedule),
//! deterministic evaluation, and anchor estimation.

use crate::checkpoint::{Checkpoint, EpochRecord};
use crate::data::augment::{apply_augmentations, mosaic4, AugmentationConfig};
use crate::data::dataset::{Dataset, Sample};
use crate::data::labels::BoundingBoxLabel;
use crate::error::{Error, Result};
use crate::head::{
    assign_targets, detection_loss, total_loss, LossBreakdown, LossConfig,
};
use crate::metrics::{self, GroundTruth, ImageEval, MapResult};
use crate::model::{Batch, Model};
use crate::nn::{ParamId, ParamKind};
use crate::sr::sr_loss;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub seed: u64,
    /// HR image side; the network input is this divided by `scale_n`.
    /// Zero infers the size from the dataset.
    pub image_size: usize,
    /// Downsample factor producing the LR input (fixed to 2 by the SR
    /// branch's exact-recovery requirement).
    pub scale_n: usize,
    /// Linear warmup span in epochs, then cosine decay to `lrf * lr0`.
    pub warmup_epochs: f64,
    pub lrf: f64,
    /// Estimate anchors from the training labels before the first step.
    pub auto_anchors: bool,
    pub device: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 2,
            lr0: 0.01,
            momentum: 0.937,
            weight_decay: 0.0005,
            nesterov: true,
            seed: 0,
            image_size: 0,
            scale_n: 2,
            warmup_epochs: 3.0,
            lrf: 0.01,
            auto_anchors: true,
            device: "cpu".to_string(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::config("train.lr0", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if self.scale_n == 0 {
            return Err(Error::config("train.scale_n", "must be >= 1"));
        }
        if self.image_size != 0 && self.image_size % (32 * self.scale_n) != 0 {
            return Err(Error::config(
                "train.image_size",
                format!("{} not divisible by 32 * scale_n", self.image_size),
            ));
        }
        Ok(())
    }
}

/// SGD with Nesterov momentum and decoupled parameter groups: weight decay
/// applies to convolution/linear weights only.
pub struct SgdOptimizer {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    velocities: Vec<Option<Tensor>>,
}

impl SgdOptimizer {
    pub fn new(momentum: f64, weight_decay: f64, nesterov: bool, n_params: usize) -> Self {
        SgdOptimizer {
            momentum,
            weight_decay,
            nesterov,
            velocities: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[(ParamId, Tensor)], lr: f64) {
        for (id, grad) in grads {
            let kind = model.store.get(*id).kind;
            if kind == ParamKind::Buffer {
                continue;
            }
            let mut g = grad.clone();
            if self.weight_decay > 0.0 && kind == ParamKind::Weight {
                let p = model.store.tensor(*id);
                for (gv, pv) in g.data_mut().iter_mut().zip(p.data()) {
                    *gv += self.weight_decay * pv;
                }
            }
            let v = self.velocities[index_of(*id)].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.momentum * *vv + gv;
            }
            let p = model.store.tensor_mut(*id);
            if self.nesterov {
                for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data()) {
                    *pv -= lr * (gv + self.momentum * vv);
                }
            } else {
                for (pv, vv) in p.data_mut().iter_mut().zip(v.data()) {
                    *pv -= lr * vv;
                }
            }
        }
    }

    /// Named momentum buffers for checkpointing.
    pub fn state(&self, model: &Model) -> Vec<(String, Tensor)> {
        self.velocities
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                v.as_ref()
                    .map(|t| (model.store.name(param_id(i)).to_string(), t.clone()))
            })
            .collect()
    }

    pub fn restore(&mut self, model: &Model, state: &[(String, Tensor)]) {
        for (name, t) in state {
            if let Some(id) = model.store.id_of(name) {
                self.velocities[index_of(id)] = Some(t.clone());
            }
        }
    }
}

fn index_of(id: ParamId) -> usize {
    id.index()
}

fn param_id(index: usize) -> ParamId {
    ParamId::from_index(index)
}

/// Warmup then cosine decay, evaluated at a fractional epoch.
pub fn lr_at(cfg: &TrainConfig, epoch_f: f64) -> f64 {
    if cfg.warmup_epochs > 0.0 && epoch_f < cfg.warmup_epochs {
        return cfg.lr0 * (epoch_f / cfg.warmup_epochs).max(1e-3);
    }
    let span = (cfg.epochs as f64 - cfg.warmup_epochs).max(1e-9);
    let progress = ((epoch_f - cfg.warmup_epochs) / span).clamp(0.0, 1.0);
    cfg.lr0 * (cfg.lrf + (1.0 - cfg.lrf) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// K-means anchor estimation over label sizes in LR-input pixels.
pub fn kmeans_anchors(
    labels_per_image: &[Vec<BoundingBoxLabel>],
    input_size: usize,
    k: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut points: Vec<(f64, f64)> = labels_per_image
        .iter()
        .flatten()
        .map(|l| (l.w * input_size as f64, l.h * input_size as f64))
        .filter(|(w, h)| *w > 0.0 && *h > 0.0)
        .collect();
    if points.is_empty() {
        points.push((8.0, 8.0));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut centers: Vec<(f64, f64)> = (0..k)
        .map(|_| points[rng.gen_range(0..points.len())])
        .collect();
    let mut assign = vec![0usize; points.len()];
    for _ in 0..30 {
        for (i, p) in points.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (c, ctr) in centers.iter().enumerate() {
                let d = (p.0 - ctr.0).powi(2) + (p.1 - ctr.1).powi(2);
                if d < best.1 {
                    best = (c, d);
                }
            }
            assign[i] = best.0;
        }
        for (c, ctr) in centers.iter_mut().enumerate() {
            let members: Vec<&(f64, f64)> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                ctr.0 = members.iter().map(|p| p.0).sum::<f64>() / members.len() as f64;
                ctr.1 = members.iter().map(|p| p.1).sum::<f64>() / members.len() as f64;
            }
        }
    }
    centers.sort_by(|a, b| (a.0 * a.1).partial_cmp(&(b.0 * b.1)).unwrap());
    centers
}

/// Configure per-detector anchors from the dataset.
pub fn estimate_anchors(
    model: &mut Model,
    labels_per_image: &[Vec<BoundingBoxLabel>],
    input_size: usize,
    seed: u64,
) {
    let n_det = model.cfg.head.n_detectors;
    let centers = kmeans_anchors(labels_per_image, input_size, 3 * n_det, seed);
    let anchors: Vec<Vec<(f64, f64)>> = centers.chunks(3).map(|c| c.to_vec()).collect();
    model.cfg.head.anchors = anchors.clone();
    model.head.cfg.anchors = anchors;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalClass {
    pub class_id: usize,
    pub name: String,
    pub ap: f64,
    pub n_ground_truth: usize,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub map50: f64,
    pub per_class: Vec<EvalClass>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub n_images: usize,
}

impl EvalReport {
    /// Per-class AP table in the published column order, one row.
    pub fn to_table(&self) -> String {
        let mut header = String::from("| ");
        let mut row = String::from("| ");
        for c in &self.per_class {
            header.push_str(&format!("{} | ", c.name));
            row.push_str(&format!("{:.2} | ", c.ap * 100.0));
        }
        header.push_str("mAP50 |");
        row.push_str(&format!("{:.2} |", self.map50 * 100.0));
        let mut s = format!("{header}\n{row}\n");
        if let (Some(p), Some(ss)) = (self.psnr, self.ssim) {
            s.push_str(&format!("PSNR {p:.3}  SSIM {ss:.3}\n"));
        }
        s
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Per-step total-loss trace.
    pub step_losses: Vec<LossBreakdown>,
}

/// Train a model on a dataset. Deterministic for a fixed seed: sample
/// order, augmentation, and every kernel are seeded or order-fixed.
pub fn train(
    model: &mut Model,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    aug_cfg: &AugmentationConfig,
    dataset: &Dataset,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    aug_cfg.validate()?;
    loss_cfg.validate(model.cfg.head.n_detectors)?;
    if dataset.n_classes() != model.cfg.n_classes {
        return Err(Error::config(
            "model.n_classes",
            format!(
                "dataset has {} classes, model {}",
                dataset.n_classes(),
                model.cfg.n_classes
            ),
        ));
    }

    let samples: Vec<Sample> = dataset.load_all()?;
    if samples.is_empty() {
        return Err(Error::Other("empty dataset".into()));
    }
    let actual = samples[0].pair.height;
    if train_cfg.image_size != 0 && train_cfg.image_size != actual {
        return Err(Error::config(
            "train.image_size",
            format!("configured {} but dataset images are {actual}", train_cfg.image_size),
        ));
    }
    let input_size = actual / train_cfg.scale_n;
    if train_cfg.auto_anchors {
        let all_labels: Vec<Vec<BoundingBoxLabel>> =
            samples.iter().map(|s| s.labels.clone()).collect();
        estimate_anchors(model, &all_labels, input_size, train_cfg.seed);
    }

    let strides = model.strides();
    let n_params = model.store.len();
    let mut optim = SgdOptimizer::new(
        train_cfg.momentum,
        train_cfg.weight_decay,
        train_cfg.nesterov,
        n_params,
    );
    let steps_per_epoch = samples.len().div_ceil(train_cfg.batch_size);
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut global_step = 0usize;

    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut epoch_rng =
            ChaCha12Rng::seed_from_u64(train_cfg.seed ^ (epoch as u64).wrapping_mul(0x9E3779B9));
        order.shuffle(&mut epoch_rng);

        let mut epoch_loss = LossBreakdown::default();
        let mut epoch_lr = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let epoch_f = epoch as f64 + (global_step % steps_per_epoch) as f64 / steps_per_epoch as f64;
            let lr = lr_at(train_cfg, epoch_f);
            epoch_lr = lr;

            // assemble the batch with augmentation
            let mut staged = Vec::with_capacity(chunk.len());
            for (bi, &i) in chunk.iter().enumerate() {
                let aug_seed = train_cfg
                    .seed
                    .wrapping_add((epoch as u64) << 24)
                    .wrapping_add((global_step as u64) << 8)
                    .wrapping_add(bi as u64);
                let s = &samples[i];
                let use_mosaic =
                    aug_cfg.enabled && epoch_rng.gen_range(0.0..1.0) < aug_cfg.mosaic_prob;
                let (pair, labels) = if use_mosaic && samples.len() >= 4 {
                    let mut others: [usize; 3] = [0; 3];
                    for o in others.iter_mut() {
                        *o = epoch_rng.gen_range(0..samples.len());
                    }
                    let inputs = [
                        (&s.pair, s.labels.as_slice()),
                        (&samples[others[0]].pair, samples[others[0]].labels.as_slice()),
                        (&samples[others[1]].pair, samples[others[1]].labels.as_slice()),
                        (&samples[others[2]].pair, samples[others[2]].labels.as_slice()),
                    ];
                    let (p, l) = mosaic4(&inputs, aug_seed)?;
                    apply_augmentations(&p, &l, aug_cfg, aug_seed ^ 0xA5A5)
                } else {
                    apply_augmentations(&s.pair, &s.labels, aug_cfg, aug_seed)
                };
                staged.push((pair, labels));
            }
            let refs: Vec<(&crate::data::ImagePair, &[BoundingBoxLabel])> = staged
                .iter()
                .map(|(p, l)| (p, l.as_slice()))
                .collect();
            let sr_on = model.sr.is_some();
            let batch = Batch::from_pairs(&refs, train_cfg.scale_n, sr_on)?;

            let loss = train_step(model, &mut optim, &batch, loss_cfg, &strides, lr)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss {
                        step: global_step,
                        detail,
                    },
                    other => other,
                })?;
            epoch_loss = accumulate(epoch_loss, loss, steps_per_epoch);
            step_losses.push(loss);
            global_step += 1;
        }

        history.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            loss: epoch_loss,
        });

        if let Some(dir) = checkpoint_dir {
            let ckpt = Checkpoint::from_model(
                model,
                dataset.manifest.class_names.clone(),
                epoch,
                history.clone(),
                &optim.state(model),
            );
            ckpt.save(&dir.join("last.ckpt"))?;
        }
    }

    let checkpoint = Checkpoint::from_model(
        model,
        dataset.manifest.class_names.clone(),
        train_cfg.epochs.saturating_sub(1),
        history.clone(),
        &optim.state(model),
    );
    Ok(TrainOutcome {
        checkpoint,
        history,
        step_losses,
    })
}

fn accumulate(mut acc: LossBreakdown, step: LossBreakdown, steps: usize) -> LossBreakdown {
    let w = 1.0 / steps as f64;
    acc.l_loc += step.l_loc * w;
    acc.l_obj += step.l_obj * w;
    acc.l_cls += step.l_cls * w;
    acc.l_o += step.l_o * w;
    acc.l_s += step.l_s * w;
    acc.l_total += step.l_total * w;
    acc
}

/// One optimizer step on one batch; returns the loss breakdown.
pub fn train_step(
    model: &mut Model,
    optim: &mut SgdOptimizer,
    batch: &Batch,
    loss_cfg: &LossConfig,
    strides: &[usize],
    lr: f64,
) -> Result<LossBreakdown> {
    let sr_on = model.sr.is_some();
    let mut pass = model.forward(batch, true, true, sr_on);
    let (ih, iw) = batch.input_hw();
    let targets = assign_targets(&batch.labels, &model.cfg.head, iw, ih, strides);
    let nodes = detection_loss(
        &mut pass.fx,
        &pass.raw,
        &targets,
        &model.cfg.head,
        loss_cfg,
        strides,
        batch.len(),
    )?;
    let ls_node = match (pass.sr_out, &batch.hr_rgb) {
        (Some(sr), Some(hr)) => Some(sr_loss(
            &mut pass.fx,
            sr,
            Arc::new(hr.clone()),
            model.sr.as_ref().unwrap().cfg.loss,
        )),
        _ => None,
    };
    let lt = total_loss(&mut pass.fx, nodes.l_o, ls_node, loss_cfg);

    let breakdown = LossBreakdown {
        l_loc: pass.fx.graph.value(nodes.l_loc).item(),
        l_obj: pass.fx.graph.value(nodes.l_obj).item(),
        l_cls: pass.fx.graph.value(nodes.l_cls).item(),
        l_o: pass.fx.graph.value(nodes.l_o).item(),
        l_s: ls_node.map_or(0.0, |n| pass.fx.graph.value(n).item()),
        l_total: pass.fx.graph.value(lt).item(),
    };
    if !breakdown.l_total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            detail: format!("loss breakdown {breakdown:?}"),
        });
    }

    let mut grads = pass.fx.graph.backward(lt);
    let param_grads = pass.fx.param_grads(&mut grads);
    let bn_updates = pass.fx.take_bn_updates();
    drop(pass);
    optim.step(model, &param_grads, lr);
    for (id, t) in bn_updates {
        *model.store.tensor_mut(id) = t;
    }
    Ok(breakdown)
}

/// Deterministic evaluation: augmentation off, batch norm in inference
/// statistics mode, metrics over decoded detections.
pub fn evaluate(model: &Model, dataset: &Dataset, conf_threshold: f64) -> Result<EvalReport> {
    if dataset.n_classes() != model.cfg.n_classes {
        return Err(Error::config(
            "model.n_classes",
            format!(
                "checkpoint built for {} classes, dataset has {}",
                model.cfg.n_classes,
                dataset.n_classes()
            ),
        ));
    }
    let samples = dataset.load_all()?;
    let strides = model.strides();
    let n = 2usize; // evaluation consumes LR inputs like training
    let sr_on = model.sr.is_some();

    let mut all_dets: Vec<Vec<crate::head::Detection>> = Vec::with_capacity(samples.len());
    let mut all_gts: Vec<Vec<GroundTruth>> = Vec::with_capacity(samples.len());
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut quality_count = 0usize;

    for s in &samples {
        let batch = Batch::from_pairs(&[(&s.pair, s.labels.as_slice())], n, sr_on)?;
        let pass = model.forward(&batch, false, false, sr_on);
        let raw: Vec<Tensor> = pass
            .raw
            .iter()
            .map(|&r| pass.fx.graph.value(r).clone())
            .collect();
        let (ih, iw) = batch.input_hw();
        let dets = model
            .head
            .decode_detections(&raw, 0, &strides, conf_threshold, iw, ih);
        let gts: Vec<GroundTruth> = s
            .labels
            .iter()
            .map(|l| {
                let (x0, y0, x1, y1) = l.xyxy();
                GroundTruth {
                    class_id: l.class_id,
                    x1: x0 * iw as f64,
                    y1: y0 * ih as f64,
                    x2: x1 * iw as f64,
                    y2: y1 * ih as f64,
                }
            })
            .collect();
        all_dets.push(dets);
        all_gts.push(gts);

        if let (Some(sr), Some(hr)) = (pass.sr_out, &batch.hr_rgb) {
            let sr_val = pass.fx.graph.value(sr);
            let (h, w) = (sr_val.shape()[2], sr_val.shape()[3]);
            let mut sr_img = Tensor::zeros(&[3, h, w]);
            for (o, v) in sr_img.data_mut().iter_mut().zip(sr_val.data()) {
                *o = v.clamp(0.0, 1.0);
            }
            let hr_img = Tensor::new(vec![3, h, w], hr.data()[..3 * h * w].to_vec());
            psnr_sum += crate::metrics::psnr(&sr_img, &hr_img).min(99.0);
            ssim_sum += crate::metrics::ssim(&sr_img, &hr_img);
            quality_count += 1;
        }
    }

    let images: Vec<ImageEval> = all_dets
        .iter()
        .zip(&all_gts)
        .map(|(d, g)| ImageEval { dets: d, gts: g })
        .collect();
    let result: MapResult =
        metrics::mean_average_precision(&images, model.cfg.n_classes, 0.5);

    let class_names = &dataset.manifest.class_names;
    let per_class = result
        .per_class
        .iter()
        .map(|c| EvalClass {
            class_id: c.class_id,
            name: class_names
                .get(c.class_id)
                .cloned()
                .unwrap_or_else(|| format!("class{}", c.class_id)),
            ap: c.ap,
            n_ground_truth: c.n_ground_truth,
            points: c.points.clone(),
        })
        .collect();

    Ok(EvalReport {
        map50: result.map50,
        per_class,
        psnr: (quality_count > 0).then(|| psnr_sum / quality_count as f64),
        ssim: (quality_count > 0).then(|| ssim_sum / quality_count as f64),
        n_images: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig {
            epochs: 10,
            warmup_epochs: 2.0,
            lr0: 0.01,
            lrf: 0.01,
            ..Default::default()
        };
        assert!(lr_at(&cfg, 0.0) < 0.001);
        assert!((lr_at(&cfg, 2.0) - 0.01).abs() < 1e-9);
        assert!(lr_at(&cfg, 6.0) < 0.01);
        assert!((lr_at(&cfg, 10.0) - 0.0001).abs() < 1e-9);
    }

    #[test]
    fn kmeans_anchors_sorted_by_area() {
        let labels = vec![vec![
            BoundingBoxLabel::new(0, 0.5, 0.5, 0.1, 0.1).unwrap(),
            BoundingBoxLabel::new(0, 0.5, 0.5, 0.4, 0.4).unwrap(),
            BoundingBoxLabel::new(0, 0.5, 0.5, 0.2, 0.25).unwrap(),
        ]];
        let anchors = kmeans_anchors(&labels, 64, 3, 0);
        assert_eq!(anchors.len(), 3);
        for pair in anchors.windows(2) {
            assert!(pair[0].0 * pair[0].1 <= pair[1].0 * pair[1].1);
        }
    }

    #[test]
    fn nesterov_sgd_matches_reference_sequence() {
        // single scalar weight, reference sequence computed by hand with
        // v_t = mu v_{t-1} + g, w -= lr (g + mu v_t)
        let mut cfg = crate::model::ModelConfig::superyolo(2);
        cfg.backbone.width_multiple = 0.25;
        cfg.image_size_hint = 64;
        let mut model = Model::new(cfg).unwrap();
        let id = model.store.id_of("head.detect0.bias").unwrap();
        let w0 = model.store.tensor(id).data()[0];
        let mut optim = SgdOptimizer::new(0.9, 0.0, true, model.store.len());
        let mut grad = Tensor::zeros(model.store.tensor(id).shape());
        grad.data_mut()[0] = 1.0;
        optim.step(&mut model, &[(id, grad.clone())], 0.1);
        // v=1, update = g + mu v = 1.9 -> w0 - 0.19
        assert!((model.store.tensor(id).data()[0] - (w0 - 0.19)).abs() < 1e-12);
        optim.step(&mut model, &[(id, grad)], 0.1);
        // v = 0.9 + 1 = 1.9, update = 1 + 0.9*1.9 = 2.71 -> further -0.271
        assert!((model.store.tensor(id).data()[0] - (w0 - 0.19 - 0.271)).abs() < 1e-12);
    }
}
