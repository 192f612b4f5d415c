//! Training-time augmentation: HSV jitter (RGB only), per-image scale,
//! translation, left-right flip, and 4-image mosaic. Geometry is applied
//! identically to RGB, IR, and labels; evaluation paths run with
//! `enabled = false`, which is the exact identity.

use super::labels::BoundingBoxLabel;
use super::{bilinear_downsample, ImagePair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Boxes whose clipped area falls below this fraction of the image are
/// dropped after a geometric transform.
const MIN_BOX_AREA: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Multiplicative jitter gains for hue, saturation, value.
    pub hsv_gains: [f64; 3],
    pub flip_lr_prob: f64,
    /// Max translation as a fraction of image size.
    pub translate_frac: f64,
    /// Per-image scale multiplier range.
    pub scale_range: (f64, f64),
    pub mosaic_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            hsv_gains: [0.015, 0.7, 0.4],
            flip_lr_prob: 0.5,
            translate_frac: 0.1,
            scale_range: (0.5, 1.5),
            mosaic_prob: 1.0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, p) in [("flip_lr_prob", self.flip_lr_prob), ("mosaic_prob", self.mosaic_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("augment.{k}"), "probability outside [0,1]"));
            }
        }
        if self.scale_range.0 > self.scale_range.1 {
            return Err(Error::config("augment.scale_range", "min exceeds max"));
        }
        if self.scale_range.0 <= 0.0 {
            return Err(Error::config("augment.scale_range", "scale must be positive"));
        }
        Ok(())
    }

    /// Identity configuration used by evaluation paths.
    pub fn disabled() -> Self {
        AugmentationConfig {
            enabled: false,
            ..Default::default()
        }
    }
}

/// Apply per-image augmentations. Deterministic for a fixed seed; the
/// identity when disabled.
pub fn apply_augmentations(
    pair: &ImagePair,
    labels: &[BoundingBoxLabel],
    cfg: &AugmentationConfig,
    seed: u64,
) -> (ImagePair, Vec<BoundingBoxLabel>) {
    if !cfg.enabled {
        return (pair.clone(), labels.to_vec());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pair = pair.clone();
    let mut labels = labels.to_vec();

    // scale + translate share one affine resample
    let scale = if cfg.scale_range == (1.0, 1.0) {
        1.0
    } else {
        rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1)
    };
    let (tx, ty) = if cfg.translate_frac > 0.0 {
        (
            rng.gen_range(-cfg.translate_frac..=cfg.translate_frac),
            rng.gen_range(-cfg.translate_frac..=cfg.translate_frac),
        )
    } else {
        (0.0, 0.0)
    };
    if scale != 1.0 || tx != 0.0 || ty != 0.0 {
        pair.rgb = affine_resample(&pair.rgb, scale, tx, ty);
        pair.ir = affine_resample(&pair.ir, scale, tx, ty);
        labels = affine_labels(&labels, scale, tx, ty);
    }

    if rng.gen_range(0.0..1.0) < cfg.flip_lr_prob {
        pair.rgb = flip_lr(&pair.rgb);
        pair.ir = flip_lr(&pair.ir);
        for l in labels.iter_mut() {
            l.cx = 1.0 - l.cx;
        }
    }

    if cfg.hsv_gains.iter().any(|&g| g > 0.0) {
        let jitter: Vec<f64> = cfg
            .hsv_gains
            .iter()
            .map(|&g| rng.gen_range(-1.0..1.0) * g + 1.0)
            .collect();
        pair.rgb = hsv_jitter(&pair.rgb, jitter[0], jitter[1], jitter[2]);
    }

    (pair, labels)
}

/// Mirror the W axis.
pub fn flip_lr(img: &Tensor) -> Tensor {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Tensor::zeros(s);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[(ci * h + y) * w + x] = img.data()[(ci * h + y) * w + (w - 1 - x)];
            }
        }
    }
    out
}

/// Scale about the image center then translate (fractions of image size),
/// sampling bilinearly with zero fill outside the source.
fn affine_resample(img: &Tensor, scale: f64, tx: f64, ty: f64) -> Tensor {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Tensor::zeros(s);
    let (cyc, cxc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    for ci in 0..c {
        let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // invert dst = (src - c)*scale + c + t
                let sy = (y as f64 - cyc - ty * h as f64) / scale + cyc;
                let sx = (x as f64 - cxc - tx * w as f64) / scale + cxc;
                let y0 = sy.floor();
                let x0 = sx.floor();
                let (fy, fx) = (sy - y0, sx - x0);
                let mut acc = 0.0;
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let yy = y0 + dy;
                        let xx = x0 + dx;
                        if yy >= 0.0 && yy < h as f64 && xx >= 0.0 && xx < w as f64 {
                            acc += wy * wx * plane[yy as usize * w + xx as usize];
                        }
                    }
                }
                out.data_mut()[(ci * h + y) * w + x] = acc;
            }
        }
    }
    out
}

fn affine_labels(labels: &[BoundingBoxLabel], scale: f64, tx: f64, ty: f64) -> Vec<BoundingBoxLabel> {
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        let map = |v: f64, t: f64| (v - 0.5) * scale + 0.5 + t;
        let x0 = map(l.cx - l.w / 2.0, tx).clamp(0.0, 1.0);
        let x1 = map(l.cx + l.w / 2.0, tx).clamp(0.0, 1.0);
        let y0 = map(l.cy - l.h / 2.0, ty).clamp(0.0, 1.0);
        let y1 = map(l.cy + l.h / 2.0, ty).clamp(0.0, 1.0);
        let (w, h) = (x1 - x0, y1 - y0);
        if w * h < MIN_BOX_AREA {
            continue;
        }
        out.push(BoundingBoxLabel {
            class_id: l.class_id,
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w,
            h,
        });
    }
    out
}

fn hsv_jitter(rgb: &Tensor, hj: f64, sj: f64, vj: f64) -> Tensor {
    let s = rgb.shape();
    let (h, w) = (s[1], s[2]);
    let mut out = rgb.clone();
    for y in 0..h {
        for x in 0..w {
            let idx = |c: usize| (c * h + y) * w + x;
            let (r, g, b) = (rgb.data()[idx(0)], rgb.data()[idx(1)], rgb.data()[idx(2)]);
            let (hh, ss, vv) = rgb_to_hsv(r, g, b);
            let hh = (hh * hj).rem_euclid(1.0);
            let ss = (ss * sj).clamp(0.0, 1.0);
            let vv = (vv * vj).clamp(0.0, 1.0);
            let (r, g, b) = hsv_to_rgb(hh, ss, vv);
            out.data_mut()[idx(0)] = r;
            out.data_mut()[idx(1)] = g;
            out.data_mut()[idx(2)] = b;
        }
    }
    out
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / d).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Standard 4-image mosaic: paste around a jittered center on a double-size
/// canvas, then bilinear-halve back to the native size. Labels stay
/// normalized throughout.
pub fn mosaic4(
    inputs: &[(&ImagePair, &[BoundingBoxLabel]); 4],
    seed: u64,
) -> Result<(ImagePair, Vec<BoundingBoxLabel>)> {
    let (h, w) = (inputs[0].0.height, inputs[0].0.width);
    for (p, _) in inputs.iter() {
        if p.height != h || p.width != w {
            return Err(Error::Shape("mosaic inputs must share dimensions".into()));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cy = (rng.gen_range(0.75..1.25) * h as f64) as usize;
    let cx = (rng.gen_range(0.75..1.25) * w as f64) as usize;
    let (ch, cw) = (2 * h, 2 * w);

    let mut rgb = Tensor::zeros(&[3, ch, cw]);
    let mut ir = Tensor::zeros(&[1, ch, cw]);
    let mut labels: Vec<BoundingBoxLabel> = Vec::new();

    for (quad, (pair, ls)) in inputs.iter().enumerate() {
        // destination rectangle on the canvas for this quadrant
        let (dx0, dy0, dx1, dy1) = match quad {
            0 => (cx.saturating_sub(w), cy.saturating_sub(h), cx, cy),
            1 => (cx, cy.saturating_sub(h), (cx + w).min(cw), cy),
            2 => (cx.saturating_sub(w), cy, cx, (cy + h).min(ch)),
            _ => (cx, cy, (cx + w).min(cw), (cy + h).min(ch)),
        };
        if dx1 <= dx0 || dy1 <= dy0 {
            continue;
        }
        // source offset: inner corners align with the mosaic center
        let (sx0, sy0) = match quad {
            0 => (w - (dx1 - dx0), h - (dy1 - dy0)),
            1 => (0, h - (dy1 - dy0)),
            2 => (w - (dx1 - dx0), 0),
            _ => (0, 0),
        };
        for c in 0..3 {
            paste(&mut rgb, &pair.rgb, c, ch, cw, h, w, (dx0, dy0, dx1, dy1), (sx0, sy0));
        }
        paste(&mut ir, &pair.ir, 0, ch, cw, h, w, (dx0, dy0, dx1, dy1), (sx0, sy0));

        let off_x = dx0 as f64 - sx0 as f64;
        let off_y = dy0 as f64 - sy0 as f64;
        for l in ls.iter() {
            let x0 = ((l.cx - l.w / 2.0) * w as f64 + off_x).clamp(dx0 as f64, dx1 as f64);
            let x1 = ((l.cx + l.w / 2.0) * w as f64 + off_x).clamp(dx0 as f64, dx1 as f64);
            let y0 = ((l.cy - l.h / 2.0) * h as f64 + off_y).clamp(dy0 as f64, dy1 as f64);
            let y1 = ((l.cy + l.h / 2.0) * h as f64 + off_y).clamp(dy0 as f64, dy1 as f64);
            let (bw, bh) = ((x1 - x0) / cw as f64, (y1 - y0) / ch as f64);
            if bw * bh < MIN_BOX_AREA {
                continue;
            }
            labels.push(BoundingBoxLabel {
                class_id: l.class_id,
                cx: (x0 + x1) / 2.0 / cw as f64,
                cy: (y0 + y1) / 2.0 / ch as f64,
                w: bw,
                h: bh,
            });
        }
    }

    let pair = ImagePair::new(
        bilinear_downsample(&rgb, 2)?,
        bilinear_downsample(&ir, 2)?,
        format!("{}__mosaic", inputs[0].0.id),
    )?;
    Ok((pair, labels))
}

#[allow(clippy::too_many_arguments)]
fn paste(
    dst: &mut Tensor,
    src: &Tensor,
    c: usize,
    ch: usize,
    cw: usize,
    h: usize,
    w: usize,
    rect: (usize, usize, usize, usize),
    src0: (usize, usize),
) {
    let (dx0, dy0, dx1, dy1) = rect;
    let (sx0, sy0) = src0;
    let _ = ch;
    for dy in dy0..dy1 {
        let sy = sy0 + (dy - dy0);
        if sy >= h {
            break;
        }
        for dx in dx0..dx1 {
            let sx = sx0 + (dx - dx0);
            if sx >= w {
                break;
            }
            dst.data_mut()[(c * 2 * h + dy) * cw + dx] = src.data()[(c * h + sy) * w + sx];
        }
    }
}
