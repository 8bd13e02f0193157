//! 2-D discrete Fourier transforms and radially averaged amplitude spectra.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

fn transform_rows(data: &mut Array2<Complex64>, planner: &mut FftPlanner<f64>, inverse: bool) {
    let n = data.ncols();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut buf = vec![Complex64::default(); n];
    for mut row in data.rows_mut() {
        buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
        fft.process(&mut buf);
        row.iter_mut().zip(buf.iter()).for_each(|(v, b)| *v = *b);
    }
}

fn transform_2d(input: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {
    let mut planner = FftPlanner::new();
    let mut out = input.clone();
    transform_rows(&mut out, &mut planner, inverse);
    let mut t = out.reversed_axes().as_standard_layout().to_owned();
    transform_rows(&mut t, &mut planner, inverse);
    t.reversed_axes().as_standard_layout().to_owned()
}

/// Unnormalized forward 2-D DFT.
pub fn fft2(input: &Array2<Complex64>) -> Array2<Complex64> {
    transform_2d(input, false)
}

/// Inverse 2-D DFT, scaled by `1 / (rows·cols)` so that `ifft2(fft2(x)) = x`.
pub fn ifft2(input: &Array2<Complex64>) -> Array2<Complex64> {
    let scale = 1.0 / (input.len() as f64);
    transform_2d(input, true).mapv(|v| v * scale)
}

pub fn fft2_real(input: &Array2<f64>) -> Array2<Complex64> {
    fft2(&input.mapv(|v| Complex64::new(v, 0.0)))
}

/// Signed integer frequency of DFT index `i` for a length-`n` axis.
pub fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

#[derive(Clone, Debug)]
pub struct RadialSpectrum {
    /// Integer radius of each bin, starting at 1 (DC excluded).
    pub radius: Vec<f64>,
    /// Mean DFT magnitude per bin, normalized by pixel count.
    pub amplitude: Vec<f64>,
    /// Natural log of `amplitude`; `-inf` for empty bins.
    pub log_amplitude: Vec<f64>,
    /// Least-squares slope of log amplitude against log radius over
    /// `[2, min(H, W)/4]`.
    pub slope: f64,
    /// Set when the fit range carries no energy; `slope` is then 0.
    pub degenerate: bool,
}

/// Radially averaged amplitude spectrum of `img` with its log-log slope.
/// Multi-channel images are averaged after the per-channel transform.
pub fn radial_power_spectrum(img: &ImageGrid) -> Result<RadialSpectrum> {
    let (h, w) = (img.height(), img.width());
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!(
            "radial spectrum needs at least 16x16, got {h}x{w}"
        )));
    }
    let max_bin = h.min(w) / 2;
    let mut sums = vec![0.0; max_bin + 1];
    let mut counts = vec![0usize; max_bin + 1];
    let norm = (h * w) as f64;
    for c in 0..img.channels() {
        let spec = fft2_real(&img.plane(c));
        for ((i, j), v) in spec.indexed_iter() {
            let r = signed_freq(i, h).hypot(signed_freq(j, w));
            let bin = r.round() as usize;
            if bin == 0 || bin > max_bin {
                continue;
            }
            sums[bin] += v.norm() / norm;
            counts[bin] += 1;
        }
    }
    let radius: Vec<f64> = (1..=max_bin).map(|b| b as f64).collect();
    let amplitude: Vec<f64> = (1..=max_bin)
        .map(|b| if counts[b] == 0 { 0.0 } else { sums[b] / counts[b] as f64 })
        .collect();
    let log_amplitude: Vec<f64> = amplitude.iter().map(|a| a.ln()).collect();

    let hi = (h.min(w) / 4) as f64;
    let scale = amplitude.iter().cloned().fold(0.0, f64::max);
    let fit: Vec<(f64, f64)> = radius
        .iter()
        .zip(&amplitude)
        .filter(|(r, _)| **r >= 2.0 && **r <= hi)
        .map(|(r, a)| (r.ln(), *a))
        .collect();
    let degenerate = scale <= 1e-12 || fit.iter().any(|(_, a)| *a <= scale * 1e-12);
    let slope = if degenerate {
        0.0
    } else {
        let pts: Vec<(f64, f64)> = fit.iter().map(|(x, a)| (*x, a.ln())).collect();
        least_squares_slope(&pts)
    };
    Ok(RadialSpectrum {
        radius,
        amplitude,
        log_amplitude,
        slope,
        degenerate,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn constant_image_is_degenerate() {
        let img = ImageGrid::filled(32, 32, 1, 0.3).unwrap();
        let s = radial_power_spectrum(&img).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.slope, 0.0);
        assert!(s.amplitude.iter().all(|a| a.abs() < 1e-15));
    }

    #[test]
    fn cosine_lands_in_its_bin() {
        let k = 5.0;
        let n = 32;
        let data: Vec<f64> = (0..n * n)
            .map(|i| {
                let c = (i % n) as f64;
                0.5 + 0.4 * (2.0 * std::f64::consts::PI * k * c / n as f64).cos()
            })
            .collect();
        let img = ImageGrid::new(n, n, 1, data).unwrap();
        let s = radial_power_spectrum(&img).unwrap();
        let (best, _) = s
            .amplitude
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &a)| if a > acc.1 { (i, a) } else { acc });
        assert_eq!(s.radius[best], k);
        let others: f64 = s
            .amplitude
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, a)| a)
            .sum();
        assert!(others < 1e-12);
    }

    #[test]
    fn white_noise_is_flat() {
        let mut total = 0.0;
        for seed in 0..32 {
            let mut rng = Rng::new(seed, 0);
            let data: Vec<f64> = (0..64 * 64).map(|_| rng.unit()).collect();
            let img = ImageGrid::new(64, 64, 1, data).unwrap();
            total += radial_power_spectrum(&img).unwrap().slope;
        }
        assert!((total / 32.0).abs() < 0.1, "slope {}", total / 32.0);
    }

    #[test]
    fn too_small_rejected() {
        let img = ImageGrid::filled(15, 32, 1, 0.5).unwrap();
        assert!(radial_power_spectrum(&img).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn inverse_reconstructs(seed in any::<u64>(), h in 1usize..24, w in 1usize..24) {
            let mut rng = Rng::new(seed, 1);
            let x = Array2::from_shape_fn((h, w), |_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)));
            let back = ifft2(&fft2(&x));
            let norm: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let err: f64 = x.iter().zip(back.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-9 * norm.max(1e-300));
        }
    }
}
