//! PR-curve rendering to PNG.
//!
//! Text needs a TrueType font. The first font found among
//! `SUPERYOLO_FONT`, the DejaVu system paths, or `./DejaVuSans.ttf` is
//! registered once; without one the curves still render, just unlabeled.

use crate::error::{Error, Result};
use crate::train::EvalReport;
use plotters::prelude::*;
use std::path::Path;
use std::sync::OnceLock;

const PALETTE: [RGBColor; 8] = [
    RGBColor(214, 69, 65),
    RGBColor(31, 119, 180),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(23, 190, 207),
    RGBColor(140, 86, 75),
    RGBColor(127, 127, 127),
];

fn fonts_available() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let mut candidates = vec![
            "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf".to_string(),
            "DejaVuSans.ttf".to_string(),
        ];
        if let Ok(p) = std::env::var("SUPERYOLO_FONT") {
            candidates.insert(0, p);
        }
        for path in candidates {
            if let Ok(bytes) = std::fs::read(&path) {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, leaked).is_ok()
                {
                    return true;
                }
            }
        }
        false
    })
}

fn draw_curves(path: &Path, title: &str, curves: &[(String, &[(f64, f64)])]) -> Result<()> {
    let with_text = fonts_available();
    let root = BitMapBackend::new(path, (640, 480)).into_drawing_area();
    let err = |e: String| Error::Other(format!("plot {}: {e}", path.display()));
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(12).x_label_area_size(36).y_label_area_size(44);
    if with_text {
        builder.caption(title, ("sans-serif", 22));
    }
    let mut chart = builder
        .build_cartesian_2d(0.0..1.0f64, 0.0..1.05f64)
        .map_err(|e| err(e.to_string()))?;
    let mut mesh = chart.configure_mesh();
    if with_text {
        mesh.x_desc("recall").y_desc("precision");
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(|e| err(e.to_string()))?;
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // prepend the (0, first precision) anchor so single-point curves draw
        let mut series: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 1);
        if let Some(first) = points.first() {
            series.push((0.0, first.1));
        }
        series.extend_from_slice(points);
        let drawn = chart
            .draw_series(LineSeries::new(series, color.stroke_width(2)))
            .map_err(|e| err(e.to_string()))?;
        if with_text {
            drawn.label(name.clone()).legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
            });
        }
    }
    if with_text {
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(|e| err(e.to_string()))?;
    }
    root.present().map_err(|e| err(e.to_string()))?;
    Ok(())
}

/// Write one PNG per class plus a combined plot. Returns written paths.
pub fn plot_pr_curves(report: &EvalReport, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for c in &report.per_class {
        let path = out_dir.join(format!("pr_{}.png", c.name));
        let label = format!("{} (AP {:.3})", c.name, c.ap);
        draw_curves(&path, &label, &[(label.clone(), &c.points)])?;
        written.push(path);
    }
    let combined = out_dir.join("pr_all.png");
    let curves: Vec<(String, &[(f64, f64)])> = report
        .per_class
        .iter()
        .map(|c| (format!("{} {:.3}", c.name, c.ap), c.points.as_slice()))
        .collect();
    draw_curves(
        &combined,
        &format!("PR curves (mAP50 {:.3})", report.map50),
        &curves,
    )?;
    written.push(combined);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::EvalClass;

    #[test]
    fn writes_one_file_per_class_plus_combined() {
        let dir = tempfile::tempdir().unwrap();
        let report = EvalReport {
            map50: 0.5,
            per_class: vec![
                EvalClass {
                    class_id: 0,
                    name: "car".into(),
                    ap: 0.75,
                    n_ground_truth: 4,
                    points: vec![(0.25, 1.0), (0.5, 0.9), (0.75, 0.6)],
                },
                EvalClass {
                    class_id: 1,
                    name: "van".into(),
                    ap: 0.25,
                    n_ground_truth: 2,
                    points: vec![(0.5, 0.5)],
                },
            ],
            psnr: None,
            ssim: None,
            n_images: 3,
        };
        let files = plot_pr_curves(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        for f in files {
            assert!(f.exists());
            assert!(std::fs::metadata(&f).unwrap().len() > 0);
        }
    }
}
