//! Deterministic synthetic RGB/IR dataset for desk-scale runs.
//!
//! Each class renders a distinct shape and RGB tint; the IR band carries
//! complementary contrast (hot objects on a cold background) so fusion has
//! real signal to exploit. Identical seeds produce bit-identical files.

use super::dataset::{Manifest, ManifestItem};
use super::labels::{serialize_labels, BoundingBoxLabel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_images: usize,
    pub image_size: usize,
    pub n_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_images: 8,
            image_size: 64,
            n_classes: 3,
            min_objects: 2,
            max_objects: 4,
        }
    }
}

/// Per-class visual identity: tint and shape index.
fn class_style(class: usize) -> ([f64; 3], usize) {
    const TINTS: [[f64; 3]; 8] = [
        [0.95, 0.15, 0.15],
        [0.15, 0.90, 0.20],
        [0.20, 0.30, 0.95],
        [0.95, 0.85, 0.10],
        [0.85, 0.15, 0.90],
        [0.10, 0.90, 0.85],
        [0.95, 0.55, 0.10],
        [0.90, 0.90, 0.90],
    ];
    (TINTS[class % TINTS.len()], class % 3)
}

fn render_shape(
    rgb: &mut Tensor,
    ir: &mut Tensor,
    size: usize,
    cx: f64,
    cy: f64,
    half: f64,
    class: usize,
) {
    let (tint, shape) = class_style(class);
    let (h, w) = (size, size);
    let x0 = ((cx - half).floor().max(0.0)) as usize;
    let x1 = ((cx + half).ceil().min(w as f64 - 1.0)) as usize;
    let y0 = ((cy - half).floor().max(0.0)) as usize;
    let y1 = ((cy + half).ceil().min(h as f64 - 1.0)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f64 - cx) / half;
            let dy = (y as f64 - cy) / half;
            let inside = match shape {
                0 => dx.abs() <= 1.0 && dy.abs() <= 1.0,          // square
                1 => dx * dx + dy * dy <= 1.0,                    // disc
                _ => dy >= -1.0 && dy <= 1.0 && dx.abs() <= (dy + 1.0) / 2.0, // triangle
            };
            if inside {
                for c in 0..3 {
                    rgb.data_mut()[(c * h + y) * w + x] = tint[c];
                }
                // hot object on cold background
                ir.data_mut()[y * w + x] = 0.9;
            }
        }
    }
}

/// Render one image pair plus labels.
pub fn render_image(
    cfg: &SyntheticConfig,
    index: usize,
) -> (Tensor, Tensor, Vec<BoundingBoxLabel>) {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64 * 7919));
    let s = cfg.image_size;
    let mut rgb = Tensor::zeros(&[3, s, s]);
    let mut ir = Tensor::zeros(&[1, s, s]);

    // smooth background gradient with faint noise, dark in IR; kept nearly
    // noise-free so the SR target stays reconstructable from features
    let (gx, gy) = (rng.gen_range(0.0..0.25), rng.gen_range(0.0..0.25));
    for y in 0..s {
        for x in 0..s {
            let base = 0.35 + gx * x as f64 / s as f64 + gy * y as f64 / s as f64;
            let noise = rng.gen_range(-0.005..0.005);
            for c in 0..3 {
                rgb.data_mut()[(c * s + y) * s + x] = (base + noise).clamp(0.0, 1.0);
            }
            ir.data_mut()[y * s + x] = (0.15 + noise).clamp(0.0, 1.0);
        }
    }

    let n_obj = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut labels: Vec<BoundingBoxLabel> = Vec::new();
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 0..n_obj {
        let class = rng.gen_range(0..cfg.n_classes);
        // generous object sizes: small-object detection still wants
        // several grid cells of support at desk scale
        let half = rng.gen_range(0.10..0.18) * s as f64;
        let cx = rng.gen_range(half + 1.0..s as f64 - half - 1.0);
        let cy = rng.gen_range(half + 1.0..s as f64 - half - 1.0);
        // rejection: avoid heavy overlap so boxes stay learnable
        if placed
            .iter()
            .any(|&(px, py, ph)| (px - cx).abs() < ph + half && (py - cy).abs() < ph + half)
        {
            continue;
        }
        placed.push((cx, cy, half));
        render_shape(&mut rgb, &mut ir, s, cx, cy, half, class);
        labels.push(
            BoundingBoxLabel::new(
                class,
                cx / s as f64,
                cy / s as f64,
                2.0 * half / s as f64,
                2.0 * half / s as f64,
            )
            .expect("generated label in range"),
        );
    }
    (rgb, ir, labels)
}

/// Write the dataset to `out_dir`: `images/`, `labels/`, and a manifest.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig, out_dir: &Path) -> Result<Manifest> {
    if cfg.image_size % 32 != 0 {
        return Err(Error::config(
            "synthetic.image_size",
            format!("{} not divisible by 32", cfg.image_size),
        ));
    }
    if cfg.n_classes == 0 {
        return Err(Error::config("synthetic.n_classes", "need at least one class"));
    }
    let images = out_dir.join("images");
    let labels_dir = out_dir.join("labels");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;

    let mut items = Vec::new();
    for i in 0..cfg.n_images {
        let (rgb, ir, labels) = render_image(cfg, i);
        let id = format!("synthetic_{i:04}");
        let rgb_rel = format!("images/{id}_rgb.png");
        let ir_rel = format!("images/{id}_ir.png");
        let label_rel = format!("labels/{id}.txt");
        super::write_rgb(&out_dir.join(&rgb_rel), &rgb)?;
        super::write_gray(&out_dir.join(&ir_rel), &ir)?;
        let ltext = serialize_labels(&labels);
        std::fs::write(out_dir.join(&label_rel), ltext)
            .map_err(|e| Error::io(out_dir.join(&label_rel), e))?;
        items.push(ManifestItem {
            id,
            rgb: rgb_rel,
            ir: ir_rel,
            label: label_rel,
            split: "train".to_string(),
        });
    }

    let manifest = Manifest {
        version: 1,
        n_classes: cfg.n_classes,
        class_names: (0..cfg.n_classes).map(|c| format!("class{c}")).collect(),
        ir_bit_depth: 8,
        items,
    };
    manifest.save(&out_dir.join("manifest.toml"))?;
    Ok(manifest)
}
