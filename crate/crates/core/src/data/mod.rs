//! Dataset ingestion: aligned RGB/IR pairs, normalization, the bilinear
//! downsampling that produces the network's LR input, label formats,
//! augmentation, and a deterministic synthetic dataset generator.

pub mod augment;
pub mod dataset;
pub mod labels;
pub mod synthetic;
pub mod vedai;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Aligned RGB and IR rasters, normalized to `[0, 1]`.
///
/// The IR band is stored single-channel; the fusion module consumes it
/// through its own 1x1 convolutions, so no 3-band expansion happens here.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub rgb: Tensor, // [3, H, W]
    pub ir: Tensor,  // [1, H, W]
    pub height: usize,
    pub width: usize,
    pub id: String,
}

impl ImagePair {
    pub fn new(rgb: Tensor, ir: Tensor, id: impl Into<String>) -> Result<Self> {
        let rs = rgb.shape();
        let is = ir.shape();
        if rs.len() != 3 || rs[0] != 3 {
            return Err(Error::Shape(format!("rgb raster must be [3, H, W], got {rs:?}")));
        }
        if is.len() != 3 || is[0] != 1 {
            return Err(Error::Shape(format!("ir raster must be [1, H, W], got {is:?}")));
        }
        if rs[1] != is[1] || rs[2] != is[2] {
            return Err(Error::Shape(format!(
                "rgb {Hr}x{Wr} and ir {Hi}x{Wi} dimensions differ",
                Hr = rs[1],
                Wr = rs[2],
                Hi = is[1],
                Wi = is[2]
            )));
        }
        let (h, w) = (rs[1], rs[2]);
        for v in rgb.iter().chain(ir.iter()) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Range(format!("pixel value {v} outside [0,1]")));
            }
        }
        Ok(ImagePair {
            rgb,
            ir,
            height: h,
            width: w,
            id: id.into(),
        })
    }

    /// Validate the stride budget: both dimensions divisible by 32 and by
    /// the downsample factor, so the LR input still divides by 32.
    pub fn check_divisibility(&self, n: usize) -> Result<()> {
        let need = 32 * n;
        if self.height % need != 0 || self.width % need != 0 {
            return Err(Error::Shape(format!(
                "image {}x{} not divisible by 32*n = {need}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Downsample both bands by `n`, producing the network input pair.
    pub fn to_lr(&self, n: usize) -> Result<LrPair> {
        Ok(LrPair {
            rgb_lr: bilinear_downsample(&self.rgb, n)?,
            ir_lr: bilinear_downsample(&self.ir, n)?,
            scale_n: n,
        })
    }
}

/// The downsampled input pair fed to fusion and backbone.
#[derive(Debug, Clone)]
pub struct LrPair {
    pub rgb_lr: Tensor,
    pub ir_lr: Tensor,
    pub scale_n: usize,
}

impl LrPair {
    pub fn height(&self) -> usize {
        self.rgb_lr.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.rgb_lr.shape()[2]
    }
}

/// Scale an integer-valued raster into `[0, 1]` by its bit-depth maximum.
///
/// Exact division: `normalize(x)[i] == x[i] / max_value`.
pub fn normalize(raster: &Tensor, max_value: f64) -> Result<Tensor> {
    let mut out = raster.clone();
    for v in out.data_mut() {
        if *v < 0.0 || *v > max_value {
            return Err(Error::Range(format!(
                "raster value {v} outside [0, {max_value}]"
            )));
        }
        *v /= max_value;
    }
    Ok(out)
}

/// Bilinear downsampling by an integer factor with half-pixel sample
/// centers: output pixel `i` reads source coordinate `(i + 0.5) * n - 0.5`.
/// `n = 1` is the identity. `n` must divide both dimensions: the SR branch
/// needs the exact `2x` recovery.
pub fn bilinear_downsample(image: &Tensor, n: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [C, H, W], got {s:?}")));
    }
    if n == 0 {
        return Err(Error::Range("downsample factor must be >= 1".into()));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h % n != 0 || w % n != 0 {
        return Err(Error::Shape(format!(
            "factor {n} does not divide {h}x{w}; the SR branch requires exact recovery"
        )));
    }
    if n == 1 {
        return Ok(image.clone());
    }
    let (ho, wo) = (h / n, w / n);
    let mut out = Tensor::zeros(&[c, ho, wo]);
    let sample = |plane: &[f64], y: f64, x: f64| -> f64 {
        let y0 = y.floor().clamp(0.0, (h - 1) as f64) as usize;
        let x0 = x.floor().clamp(0.0, (w - 1) as f64) as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let ty = (y - y0 as f64).clamp(0.0, 1.0);
        let tx = (x - x0 as f64).clamp(0.0, 1.0);
        let a = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
        let b = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
        a * (1.0 - ty) + b * ty
    };
    for ci in 0..c {
        let plane = &image.data()[ci * h * w..(ci + 1) * h * w];
        for oy in 0..ho {
            let sy = (oy as f64 + 0.5) * n as f64 - 0.5;
            for ox in 0..wo {
                let sx = (ox as f64 + 0.5) * n as f64 - 0.5;
                out.data_mut()[(ci * ho + oy) * wo + ox] = sample(plane, sy, sx);
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------- image IO

/// Read an RGB image (8-bit PNG or JPEG) into a normalized `[3, H, W]` raster.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            t.data_mut()[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// Read a single-channel IR image (8- or 16-bit PNG), normalizing by the
/// source bit depth. Returns the raster and the detected bit depth.
pub fn read_ir(path: &Path) -> Result<(Tensor, u8)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let (t, depth) = match img {
        image::DynamicImage::ImageLuma16(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let mut t = Tensor::zeros(&[1, h, w]);
            for (x, y, p) in g.enumerate_pixels() {
                t.data_mut()[y as usize * w + x as usize] = p.0[0] as f64 / 65535.0;
            }
            (t, 16)
        }
        other => {
            let g = other.to_luma8();
            let (w, h) = (g.width() as usize, g.height() as usize);
            let mut t = Tensor::zeros(&[1, h, w]);
            for (x, y, p) in g.enumerate_pixels() {
                t.data_mut()[y as usize * w + x as usize] = p.0[0] as f64 / 255.0;
            }
            (t, 8)
        }
    };
    Ok((t, depth))
}

/// Write a normalized `[3, H, W]` raster as an 8-bit RGB PNG.
pub fn write_rgb(path: &Path, raster: &Tensor) -> Result<()> {
    let s = raster.shape();
    assert_eq!(s.len(), 3);
    assert_eq!(s[0], 3);
    let (h, w) = (s[1], s[2]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| {
                (raster.data()[(c * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write a normalized `[1, H, W]` raster as an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, raster: &Tensor) -> Result<()> {
    let s = raster.shape();
    assert_eq!(s.len(), 3);
    assert_eq!(s[0], 1);
    let (h, w) = (s[1], s[2]);
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (raster.data()[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}
