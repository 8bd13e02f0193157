//! Procedural stand-ins for natural test photographs: a smooth colour
//! gradient with low-frequency shading, a handful of large occluding shapes,
//! and rows of small dark glyph-like bars.

use crate::error::Result;
use crate::grid::ImageGrid;
use crate::noise::{spectral_field, DeadLeavesVariant, NoiseSpec, NoiseFamily, power_law_sample};
use crate::rng::{stream_id, Rng};

const PHOTO_STREAM_TAG: u32 = 7;

pub fn pseudo_photo(height: usize, width: usize, channels: usize, seed: u64, index: u64) -> Result<ImageGrid> {
    let mut rng = Rng::new(seed, stream_id(PHOTO_STREAM_TAG, index));
    let (h, w, ch) = (height, width, channels);
    let mut img = vec![0.0; h * w * ch];

    // gradient between two colours along a random direction
    let c0: Vec<f64> = (0..ch).map(|_| rng.uniform(0.1, 0.9)).collect();
    let c1: Vec<f64> = (0..ch).map(|_| rng.uniform(0.1, 0.9)).collect();
    let theta = rng.uniform(0.0, std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    let shade = spectral_field(h, w, 3.0, &mut rng);
    let smax = shade.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for r in 0..h {
        for col in 0..w {
            let u = r as f64 / (h - 1).max(1) as f64 - 0.5;
            let v = col as f64 / (w - 1).max(1) as f64 - 0.5;
            let t = (c * u + s * v + 0.5).clamp(0.0, 1.0);
            let sh = 0.15 * shade[[r, col]] / smax;
            for k in 0..ch {
                img[(r * w + col) * ch + k] = c0[k] * (1.0 - t) + c1[k] * t + sh;
            }
        }
    }

    // a few large occluders with a soft internal gradient
    let n_shapes = 6 + (rng.unit() * 6.0) as usize;
    let scale = h.min(w) as f64;
    for _ in 0..n_shapes {
        let size = power_law_sample(0.12 * scale, 0.5 * scale, 2.0, rng.unit());
        let cy = rng.uniform(0.0, h as f64);
        let cx = rng.uniform(0.0, w as f64);
        let circle = rng.unit() < 0.5;
        let angle = rng.uniform(0.0, std::f64::consts::FRAC_PI_2);
        let (sa, ca) = angle.sin_cos();
        let base: Vec<f64> = (0..ch).map(|_| rng.uniform(0.05, 0.95)).collect();
        let tilt = rng.uniform(-0.3, 0.3);
        let half = size / 2.0;
        for r in 0..h {
            for col in 0..w {
                let dy = r as f64 + 0.5 - cy;
                let dx = col as f64 + 0.5 - cx;
                let inside = if circle {
                    dx * dx + dy * dy <= half * half
                } else {
                    let a = ca * dx + sa * dy;
                    let b = -sa * dx + ca * dy;
                    a.abs() <= half && b.abs() <= half
                };
                if inside {
                    let g = tilt * dy / size;
                    for k in 0..ch {
                        img[(r * w + col) * ch + k] = base[k] + g;
                    }
                }
            }
        }
    }

    // glyph rows: short dark bars of varying height on a common baseline
    let rows = 1 + (rng.unit() * 2.0) as usize;
    for _ in 0..rows {
        let baseline = rng.uniform(0.2, 0.9) * h as f64;
        let mut x = rng.uniform(0.05, 0.3) * w as f64;
        let ink = rng.uniform(0.0, 0.15);
        while x < 0.9 * w as f64 {
            let bw = rng.uniform(1.0, 2.5);
            let bh = rng.uniform(2.0, 6.0) * scale / 64.0;
            for r in (baseline - bh).max(0.0) as usize..(baseline as usize).min(h) {
                for col in x as usize..((x + bw) as usize).min(w) {
                    for k in 0..ch {
                        img[(r * w + col) * ch + k] = ink;
                    }
                }
            }
            x += bw + rng.uniform(1.0, 3.0);
        }
    }
    ImageGrid::from_clipped(h, w, ch, img)
}

/// `n` pseudo-photos from consecutive streams.
pub fn pseudo_photo_set(n: usize, height: usize, width: usize, channels: usize, seed: u64) -> Result<Vec<ImageGrid>> {
    (0..n as u64)
        .map(|i| pseudo_photo(height, width, channels, seed, i))
        .collect()
}

/// Dead-leaves composite used as a harder, edge-heavy test image.
pub fn dead_leaves_photo(height: usize, width: usize, channels: usize, seed: u64) -> Result<ImageGrid> {
    let spec = NoiseSpec::new(NoiseFamily::DeadLeavesMixed, height, width, channels, seed);
    let mut rng = Rng::new(seed, stream_id(PHOTO_STREAM_TAG, 1 << 20));
    let s = height.min(width) as f64;
    crate::noise::gen_dead_leaves(&spec, DeadLeavesVariant::Mixed, 60, 2.0, (0.08 * s, 0.6 * s), &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = pseudo_photo(32, 32, 3, 1, 0).unwrap();
        let b = pseudo_photo(32, 32, 3, 1, 0).unwrap();
        let c = pseudo_photo(32, 32, 3, 1, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn natural_like_spectrum() {
        let imgs = pseudo_photo_set(5, 64, 64, 3, 2).unwrap();
        for img in &imgs {
            let s = crate::spectrum::radial_power_spectrum(img).unwrap();
            assert!(s.slope < -0.8, "slope {}", s.slope);
        }
    }
}
