//! Image-quality metrics for the SR branch: PSNR and windowed SSIM.

use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in decibels, peak 1.0 on normalized images.
/// Identical images report `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr on mismatched shapes");
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5)
/// and the standard stabilizers, averaged over channels. Inputs are
/// `[C, H, W]` rasters in `[0, 1]`.
pub fn ssim(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "ssim on mismatched shapes");
    let s = a.shape();
    assert_eq!(s.len(), 3, "ssim expects [C, H, W]");
    let (c, h, w) = (s[0], s[1], s[2]);
    let window = gaussian_window(11, 1.5);
    let mut total = 0.0;
    for ci in 0..c {
        let pa = &a.data()[ci * h * w..(ci + 1) * h * w];
        let pb = &b.data()[ci * h * w..(ci + 1) * h * w];
        total += ssim_plane(pa, pb, h, w, &window);
    }
    total / c as f64
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut win = vec![0.0; size * size];
    let mut sum = 0.0;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            win[y * size + x] = v;
            sum += v;
        }
    }
    for v in win.iter_mut() {
        *v /= sum;
    }
    win
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, window: &[f64]) -> f64 {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let k = 11usize;
    let half = k / 2;
    // valid windows only; tiny images fall back to a single global window
    if h < k || w < k {
        return ssim_global(a, b);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in half..h - half {
        for cx in half..w - half {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for wy in 0..k {
                for wx in 0..k {
                    let wgt = window[wy * k + wx];
                    let ia = a[(cy + wy - half) * w + cx + wx - half];
                    let ib = b[(cy + wy - half) * w + cx + wx - half];
                    ma += wgt * ia;
                    mb += wgt * ib;
                    va += wgt * ia * ia;
                    vb += wgt * ib * ib;
                    cov += wgt * ia * ib;
                }
            }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
            let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

fn ssim_global(a: &[f64], b: &[f64]) -> f64 {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n;
    let vb = b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / n;
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n;
    ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
}
