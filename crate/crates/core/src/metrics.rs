//! Image quality metrics.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Reported PSNR when the two images are identical.
pub const PSNR_CAP: f64 = 200.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(mse_slices(a.data(), b.data()))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// PSNR in dB for a given mean squared error; zero error maps to [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &ImageGrid, b: &ImageGrid, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filtering with the same taps on both axes.
fn filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut horiz = Array2::<f64>::zeros((h, ow));
    for r in 0..h {
        for c in 0..ow {
            horiz[[r, c]] = (0..k).map(|t| taps[t] * x[[r, c + t]]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for r in 0..oh {
        for c in 0..ow {
            out[[r, c]] = (0..k).map(|t| taps[t] * horiz[[r + t, c]]).sum::<f64>();
        }
    }
    out
}

fn ssim_plane(x: &Array2<f64>, y: &Array2<f64>, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mx = filter_valid(x, taps);
    let my = filter_valid(y, taps);
    let sxx = filter_valid(&(x * x), taps);
    let syy = filter_valid(&(y * y), taps);
    let sxy = filter_valid(&(x * y), taps);
    let mut total = 0.0;
    for (i, (&ux, &uy)) in mx.iter().zip(my.iter()).enumerate() {
        let vx = sxx.as_slice().unwrap()[i] - ux * ux;
        let vy = syy.as_slice().unwrap()[i] - uy * uy;
        let cov = sxy.as_slice().unwrap()[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    total / mx.len() as f64
}

/// Mean SSIM over valid window positions, averaged across channels.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_shapes(a, b)?;
    if a.height().min(a.width()) < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let total: f64 = (0..a.channels())
        .map(|c| ssim_plane(&a.plane(c), &b.plane(c), &taps))
        .sum();
    Ok(total / a.channels() as f64)
}
