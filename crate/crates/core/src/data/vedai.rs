//! VEDAI annotation conversion to YOLO format.
//!
//! Source lines carry 14 whitespace-separated columns:
//! `cx cy orientation x1 x2 x3 x4 y1 y2 y3 y4 class_id occluded cropped`
//! with pixel coordinates. Conversion takes the axis-aligned hull of the
//! four corners, clips it to the image, and renumbers retained classes to a
//! contiguous range; rare classes (under 50 instances in the source data:
//! plane, motorcycle, bus) are skipped.

use super::labels::BoundingBoxLabel;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct VedaiRecord {
    pub center_x: f64,
    pub center_y: f64,
    pub orientation: f64,
    pub corners_x: [f64; 4],
    pub corners_y: [f64; 4],
    pub raw_class_id: u32,
    pub occluded: bool,
    pub cropped: bool,
}

/// Retained classes in published column order, with their source ids.
pub const VEDAI_CLASSES: [(&str, u32); 8] = [
    ("car", 1),
    ("pickup", 11),
    ("camping", 5),
    ("truck", 2),
    ("other", 10),
    ("tractor", 4),
    ("boat", 23),
    ("van", 9),
];

/// Source-id to contiguous-id map for the eight retained classes.
pub fn default_class_map() -> BTreeMap<u32, usize> {
    VEDAI_CLASSES
        .iter()
        .enumerate()
        .map(|(i, (_, raw))| (*raw, i))
        .collect()
}

pub fn class_names() -> Vec<String> {
    VEDAI_CLASSES.iter().map(|(n, _)| n.to_string()).collect()
}

pub fn parse_vedai_line(line: &str, path: &Path, lineno: usize) -> Result<VedaiRecord> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 14 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("expected 14 columns, got {}", f.len()),
        });
    }
    let num = |i: usize| -> Result<f64> {
        f[i].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("bad number {:?} in column {}", f[i], i + 1),
        })
    };
    Ok(VedaiRecord {
        center_x: num(0)?,
        center_y: num(1)?,
        orientation: num(2)?,
        corners_x: [num(3)?, num(4)?, num(5)?, num(6)?],
        corners_y: [num(7)?, num(8)?, num(9)?, num(10)?],
        raw_class_id: num(11)? as u32,
        occluded: num(12)? != 0.0,
        cropped: num(13)? != 0.0,
    })
}

/// Why a record produced no label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    UnmappedClass,
    Degenerate,
}

/// Convert one record. `Ok(Err(skip))` distinguishes intentional skips from
/// hard errors.
pub fn convert_vedai_record(
    r: &VedaiRecord,
    class_map: &BTreeMap<u32, usize>,
    img_w: usize,
    img_h: usize,
) -> std::result::Result<BoundingBoxLabel, Skip> {
    let Some(&class_id) = class_map.get(&r.raw_class_id) else {
        return Err(Skip::UnmappedClass);
    };
    let (w, h) = (img_w as f64, img_h as f64);
    let x0 = r.corners_x.iter().cloned().fold(f64::INFINITY, f64::min).clamp(0.0, w);
    let x1 = r.corners_x.iter().cloned().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, w);
    let y0 = r.corners_y.iter().cloned().fold(f64::INFINITY, f64::min).clamp(0.0, h);
    let y1 = r.corners_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, h);
    if x1 <= x0 || y1 <= y0 {
        return Err(Skip::Degenerate);
    }
    let label = BoundingBoxLabel::new(
        class_id,
        (x0 + x1) / 2.0 / w,
        (y0 + y1) / 2.0 / h,
        (x1 - x0) / w,
        (y1 - y0) / h,
    );
    label.map_err(|_| Skip::Degenerate)
}

/// Conversion summary for one annotation file.
#[derive(Debug, Default, Clone)]
pub struct ConversionStats {
    pub converted: usize,
    pub skipped_unmapped: usize,
    pub skipped_degenerate: usize,
}

pub fn convert_vedai_file(
    text: &str,
    path: &Path,
    class_map: &BTreeMap<u32, usize>,
    img_w: usize,
    img_h: usize,
) -> Result<(Vec<BoundingBoxLabel>, ConversionStats)> {
    let mut labels = Vec::new();
    let mut stats = ConversionStats::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_vedai_line(line, path, i + 1)?;
        match convert_vedai_record(&rec, class_map, img_w, img_h) {
            Ok(l) => {
                labels.push(l);
                stats.converted += 1;
            }
            Err(Skip::UnmappedClass) => stats.skipped_unmapped += 1,
            Err(Skip::Degenerate) => stats.skipped_degenerate += 1,
        }
    }
    Ok((labels, stats))
}
