//! YOLO text-format labels: one `class cx cy w h` line per object, all
//! coordinates normalized to image size.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBoxLabel {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBoxLabel {
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Range(format!("{name} = {v} outside [0,1]")));
            }
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Range(format!("degenerate box {w}x{h}")));
        }
        Ok(BoundingBoxLabel { class_id, cx, cy, w, h })
    }

    /// Corners in normalized coordinates, clipped to the unit square.
    pub fn xyxy(&self) -> (f64, f64, f64, f64) {
        (
            (self.cx - self.w / 2.0).max(0.0),
            (self.cy - self.h / 2.0).max(0.0),
            (self.cx + self.w / 2.0).min(1.0),
            (self.cy + self.h / 2.0).min(1.0),
        )
    }
}

/// Parse YOLO label text. Empty (or whitespace-only) input is an empty list.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<BoundingBoxLabel>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str, tok: &str| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("bad {what}: {tok:?}"),
        };
        let class_id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err("class id", fields[0]))?;
        let mut nums = [0.0f64; 4];
        for (i, tok) in fields[1..].iter().enumerate() {
            nums[i] = tok.parse().map_err(|_| parse_err("coordinate", tok))?;
        }
        let label =
            BoundingBoxLabel::new(class_id, nums[0], nums[1], nums[2], nums[3]).map_err(|e| {
                Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: e.to_string(),
                }
            })?;
        out.push(label);
    }
    Ok(out)
}

/// Serialize labels in file order, six decimal digits per coordinate.
pub fn serialize_labels(labels: &[BoundingBoxLabel]) -> String {
    let mut s = String::new();
    for l in labels {
        s.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            l.class_id, l.cx, l.cy, l.w, l.h
        ));
    }
    s
}

pub fn read_label_file(path: &Path) -> Result<Vec<BoundingBoxLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("test.txt")
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_labels("", &p()).unwrap().is_empty());
        assert!(parse_labels("\n  \n", &p()).unwrap().is_empty());
    }

    #[test]
    fn single_line_maps_fields() {
        let l = parse_labels("0 0.5 0.5 0.1 0.2", &p()).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0], BoundingBoxLabel::new(0, 0.5, 0.5, 0.1, 0.2).unwrap());
    }

    #[test]
    fn two_lines_in_order() {
        let l = parse_labels("3 0.25 0.75 0.05 0.05\n7 0.5 0.5 1.0 1.0", &p()).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l[0].class_id, 3);
        assert_eq!(l[1].class_id, 7);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_labels("0 0.5 0.5 0.1 0.2\n1 0.5 nope 0.1 0.1", &p()).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
        let err = parse_labels("0 0.5 0.5 0.1", &p()).unwrap_err();
        assert!(err.to_string().contains("5 fields"), "{err}");
        let err = parse_labels("0 1.5 0.5 0.1 0.1", &p()).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    proptest::proptest! {
        /// parse . serialize is the identity on valid label lists
        /// (coordinates are compared at serializer precision).
        #[test]
        fn serialize_parse_round_trip(
            raw in proptest::collection::vec(
                (0usize..16, 0.0f64..=1.0, 0.0f64..=1.0, 0.001f64..=1.0, 0.001f64..=1.0),
                0..12,
            )
        ) {
            let labels: Vec<BoundingBoxLabel> = raw
                .into_iter()
                .map(|(c, cx, cy, w, h)| BoundingBoxLabel { class_id: c, cx, cy, w, h })
                .collect();
            let text = serialize_labels(&labels);
            let parsed = parse_labels(&text, &p()).unwrap();
            proptest::prop_assert_eq!(parsed.len(), labels.len());
            for (a, b) in parsed.iter().zip(&labels) {
                proptest::prop_assert_eq!(a.class_id, b.class_id);
                proptest::prop_assert!((a.cx - b.cx).abs() < 5e-7);
                proptest::prop_assert!((a.cy - b.cy).abs() < 5e-7);
                proptest::prop_assert!((a.w - b.w).abs() < 5e-7);
                proptest::prop_assert!((a.h - b.h).abs() < 5e-7);
            }
        }
    }
}
