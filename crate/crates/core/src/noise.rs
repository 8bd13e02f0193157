//! Procedural pretraining noise: i.i.d. uniform and Gaussian fields,
//! `1/|f|^α` spectral noise, and dead-leaves occlusion images.

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array2;
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::{stream_id, Rng};
use crate::spectrum::{ifft2, signed_freq};

const CORPUS_STREAM_TAG: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Uniform,
    Gaussian,
    Spectrum,
    DeadLeavesSquares,
    DeadLeavesOriented,
    DeadLeavesMixed,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 6] = [
        NoiseFamily::Uniform,
        NoiseFamily::Gaussian,
        NoiseFamily::Spectrum,
        NoiseFamily::DeadLeavesSquares,
        NoiseFamily::DeadLeavesOriented,
        NoiseFamily::DeadLeavesMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Uniform => "uniform",
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Spectrum => "spectrum",
            NoiseFamily::DeadLeavesSquares => "dead-leaves-squares",
            NoiseFamily::DeadLeavesOriented => "dead-leaves-oriented",
            NoiseFamily::DeadLeavesMixed => "dead-leaves-mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    fn dead_leaves_variant(self) -> Option<DeadLeavesVariant> {
        match self {
            NoiseFamily::DeadLeavesSquares => Some(DeadLeavesVariant::Squares),
            NoiseFamily::DeadLeavesOriented => Some(DeadLeavesVariant::Oriented),
            NoiseFamily::DeadLeavesMixed => Some(DeadLeavesVariant::Mixed),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeadLeavesVariant {
    Squares,
    Oriented,
    Mixed,
}

/// Family parameters; each generator reads only its own fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub gaussian_mean: f64,
    pub gaussian_std: f64,
    pub alpha_range: (f64, f64),
    pub shape_count: usize,
    pub size_exponent: f64,
    /// Square side / circle diameter range in pixels.
    pub size_range: (f64, f64),
}

impl NoiseParams {
    /// Defaults with the dead-leaves size range `[4, 64]` scaled from a
    /// 128-pixel canvas to `min(height, width)`.
    pub fn for_size(height: usize, width: usize) -> Self {
        let s = height.min(width) as f64 / 128.0;
        Self {
            gaussian_mean: 0.5,
            gaussian_std: 0.2,
            alpha_range: (0.5, 3.5),
            shape_count: 2000,
            size_exponent: 3.0,
            size_range: (4.0 * s, 64.0 * s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub params: NoiseParams,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, height: usize, width: usize, channels: usize, seed: u64) -> Self {
        Self {
            family,
            height,
            width,
            channels,
            params: NoiseParams::for_size(height, width),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid(format!(
                "noise images must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!(
                "noise images have 1 or 3 channels, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    fn len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

pub fn gen_uniform(spec: &NoiseSpec, rng: &mut Rng) -> Result<ImageGrid> {
    spec.validate()?;
    let data = (0..spec.len()).map(|_| rng.unit()).collect();
    ImageGrid::new(spec.height, spec.width, spec.channels, data)
}

/// Normal draws clipped to `[0, 1]`.
pub fn gen_gaussian(spec: &NoiseSpec, rng: &mut Rng) -> Result<ImageGrid> {
    spec.validate()?;
    let normal = Normal::new(spec.params.gaussian_mean, spec.params.gaussian_std)
        .map_err(|e| Error::invalid(format!("gaussian parameters: {e}")))?;
    let data: Vec<f64> = (0..spec.len()).map(|_| normal.sample(rng)).collect();
    ImageGrid::from_clipped(spec.height, spec.width, spec.channels, data)
}

/// Real field with amplitude spectrum `|f|^-alpha` (DC zeroed) and uniform
/// random phases under Hermitian symmetry.
pub fn spectral_field(height: usize, width: usize, alpha: f64, rng: &mut Rng) -> Array2<f64> {
    let mut spec = Array2::<Complex64>::zeros((height, width));
    for i in 0..height {
        for j in 0..width {
            let (pi, pj) = ((height - i) % height, (width - j) % width);
            if (pi, pj) < (i, j) {
                continue;
            }
            let f = signed_freq(i, height).hypot(signed_freq(j, width));
            if f == 0.0 {
                continue;
            }
            let amp = f.powf(-alpha);
            let phase = rng.uniform(0.0, 2.0 * PI);
            if (pi, pj) == (i, j) {
                // Self-conjugate bins must be real; keep the amplitude and
                // take the sign from the drawn phase.
                spec[[i, j]] = Complex64::new(amp * phase.cos().signum(), 0.0);
            } else {
                let v = Complex64::from_polar(amp, phase);
                spec[[i, j]] = v;
                spec[[pi, pj]] = v.conj();
            }
        }
    }
    ifft2(&spec).mapv(|v| v.re)
}

fn affine_unit(field: &Array2<f64>) -> Vec<f64> {
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.5; field.len()];
    }
    field
        .iter()
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

/// Returns the image and the drawn exponent.
pub fn gen_spectrum(spec: &NoiseSpec, alpha_range: (f64, f64), rng: &mut Rng) -> Result<(ImageGrid, f64)> {
    spec.validate()?;
    let (lo, hi) = alpha_range;
    if !(0.0 <= lo && lo <= hi && hi <= 4.0) {
        return Err(Error::invalid(format!(
            "alpha range must satisfy 0 <= lo <= hi <= 4, got ({lo}, {hi})"
        )));
    }
    let alpha = if lo == hi { lo } else { rng.uniform(lo, hi) };
    let planes: Vec<Vec<f64>> = (0..spec.channels)
        .map(|_| affine_unit(&spectral_field(spec.height, spec.width, alpha, rng)))
        .collect();
    let mut data = Vec::with_capacity(spec.len());
    for p in 0..spec.height * spec.width {
        for plane in &planes {
            data.push(plane[p]);
        }
    }
    // min/max are hit exactly by construction
    Ok((ImageGrid::new(spec.height, spec.width, spec.channels, data)?, alpha))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Square,
    Rotated(f64),
    Circle,
}

/// Inverse-CDF draw from density `∝ r^-exponent` on `[lo, hi]`.
pub fn power_law_sample(lo: f64, hi: f64, exponent: f64, u: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    if (exponent - 1.0).abs() < 1e-12 {
        return lo * (hi / lo).powf(u);
    }
    let k = 1.0 - exponent;
    (lo.powf(k) + u * (hi.powf(k) - lo.powf(k))).powf(1.0 / k)
}

/// Dead-leaves draw; `center` overrides the random centers when set.
pub fn gen_dead_leaves_with(
    spec: &NoiseSpec,
    variant: DeadLeavesVariant,
    shape_count: usize,
    size_exponent: f64,
    size_range: (f64, f64),
    center: Option<(f64, f64)>,
    rng: &mut Rng,
) -> Result<ImageGrid> {
    spec.validate()?;
    let (r_min, r_max) = size_range;
    if shape_count == 0 {
        return Err(Error::invalid("dead leaves needs at least one shape"));
    }
    if !(r_min > 0.0 && r_min <= r_max) {
        return Err(Error::invalid(format!(
            "dead-leaves size range must satisfy 0 < r_min <= r_max, got ({r_min}, {r_max})"
        )));
    }
    let (h, w, ch) = (spec.height, spec.width, spec.channels);
    let mut canvas = vec![0.5; h * w * ch];
    for _ in 0..shape_count {
        let size = power_law_sample(r_min, r_max, size_exponent, rng.unit());
        let (cy, cx) = match center {
            Some(c) => c,
            None => (rng.uniform(0.0, h as f64), rng.uniform(0.0, w as f64)),
        };
        let shape = match variant {
            DeadLeavesVariant::Squares => Shape::Square,
            DeadLeavesVariant::Oriented => Shape::Rotated(rng.uniform(0.0, FRAC_PI_2)),
            DeadLeavesVariant::Mixed => match (rng.unit() * 3.0) as usize {
                0 => Shape::Square,
                1 => Shape::Rotated(rng.uniform(0.0, FRAC_PI_2)),
                _ => Shape::Circle,
            },
        };
        let color: Vec<f64> = (0..ch).map(|_| rng.unit()).collect();
        paint(&mut canvas, h, w, ch, shape, cy, cx, size, &color);
    }
    ImageGrid::new(h, w, ch, canvas)
}

#[allow(clippy::too_many_arguments)]
fn paint(
    canvas: &mut [f64],
    h: usize,
    w: usize,
    ch: usize,
    shape: Shape,
    cy: f64,
    cx: f64,
    size: f64,
    color: &[f64],
) {
    let half = size / 2.0;
    // A rotated square reaches half·√2 from its center.
    let reach = half * std::f64::consts::SQRT_2;
    let r0 = (cy - reach).floor().max(0.0) as usize;
    let r1 = ((cy + reach).ceil().max(0.0) as usize).min(h);
    let c0 = (cx - reach).floor().max(0.0) as usize;
    let c1 = ((cx + reach).ceil().max(0.0) as usize).min(w);
    let (sin, cos) = match shape {
        Shape::Rotated(t) => t.sin_cos(),
        _ => (0.0, 1.0),
    };
    for r in r0..r1 {
        for c in c0..c1 {
            // pixel centers
            let dy = r as f64 + 0.5 - cy;
            let dx = c as f64 + 0.5 - cx;
            let inside = match shape {
                Shape::Square => dy.abs() <= half && dx.abs() <= half,
                Shape::Rotated(_) => {
                    let u = cos * dx + sin * dy;
                    let v = -sin * dx + cos * dy;
                    u.abs() <= half && v.abs() <= half
                }
                Shape::Circle => dx * dx + dy * dy <= half * half,
            };
            if inside {
                let base = (r * w + c) * ch;
                canvas[base..base + ch].copy_from_slice(color);
            }
        }
    }
}

pub fn gen_dead_leaves(
    spec: &NoiseSpec,
    variant: DeadLeavesVariant,
    shape_count: usize,
    size_exponent: f64,
    size_range: (f64, f64),
    rng: &mut Rng,
) -> Result<ImageGrid> {
    gen_dead_leaves_with(spec, variant, shape_count, size_exponent, size_range, None, rng)
}

/// One image of `spec.family` from its own stream. The second value is the
/// drawn spectral exponent for the spectrum family.
pub fn generate(spec: &NoiseSpec, stream: u64) -> Result<(ImageGrid, Option<f64>)> {
    let mut rng = Rng::new(spec.seed, stream);
    let p = &spec.params;
    match spec.family {
        NoiseFamily::Uniform => Ok((gen_uniform(spec, &mut rng)?, None)),
        NoiseFamily::Gaussian => Ok((gen_gaussian(spec, &mut rng)?, None)),
        NoiseFamily::Spectrum => {
            let (img, a) = gen_spectrum(spec, p.alpha_range, &mut rng)?;
            Ok((img, Some(a)))
        }
        fam => {
            let variant = fam.dead_leaves_variant().expect("remaining families are dead leaves");
            let img = gen_dead_leaves(spec, variant, p.shape_count, p.size_exponent, p.size_range, &mut rng)?;
            Ok((img, None))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub stream: u64,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
}

/// Everything needed to regenerate a corpus bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: NoiseSpec,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("manifest: {e}")))
    }

    pub fn regenerate(&self) -> Result<Vec<ImageGrid>> {
        self.entries
            .iter()
            .map(|e| generate(&self.spec, e.stream).map(|(img, _)| img))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub images: Vec<ImageGrid>,
    pub manifest: CorpusManifest,
}

pub fn gen_corpus(spec: &NoiseSpec, n: usize) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::invalid("corpus size must be at least 1"));
    }
    spec.validate()?;
    let mut images = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for index in 0..n {
        let stream = stream_id(CORPUS_STREAM_TAG, index as u64);
        let (img, alpha) = generate(spec, stream)?;
        images.push(img);
        entries.push(ManifestEntry {
            index,
            stream,
            file: format!("{}_{index:04}.png", spec.family.name()),
            alpha,
        });
    }
    Ok(Corpus {
        images,
        manifest: CorpusManifest {
            spec: spec.clone(),
            entries,
        },
    })
}

/// Excess kurtosis of the per-pixel gradient magnitude (forward differences
/// on the channel-mean image).
pub fn gradient_kurtosis(img: &ImageGrid) -> f64 {
    let g = img.to_gray();
    let (h, w) = (g.height(), g.width());
    let mut mags = Vec::with_capacity((h - 1) * (w - 1));
    for r in 0..h - 1 {
        for c in 0..w - 1 {
            let v = g.get(r, c, 0);
            let dx = g.get(r, c + 1, 0) - v;
            let dy = g.get(r + 1, c, 0) - v;
            mags.push(dx.hypot(dy));
        }
    }
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let m2 = mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let m4 = mags.iter().map(|m| (m - mean).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    m4 / (m2 * m2) - 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::radial_power_spectrum;

    fn spec(family: NoiseFamily, n: usize, ch: usize) -> NoiseSpec {
        NoiseSpec::new(family, n, n, ch, 11)
    }

    #[test]
    fn uniform_range_and_mean() {
        let s = spec(NoiseFamily::Uniform, 64, 1);
        for seed in 0..4 {
            let img = gen_uniform(&s, &mut Rng::new(seed, 0)).unwrap();
            let mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
            assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12f64.sqrt()) / 64.0);
        }
    }

    #[test]
    fn uniform_streams() {
        let s = spec(NoiseFamily::Uniform, 16, 3);
        let a = generate(&s, 0).unwrap().0;
        let b = generate(&s, 0).unwrap().0;
        let c = generate(&s, 1).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_mean_and_clipping() {
        let s = spec(NoiseFamily::Gaussian, 64, 1);
        let img = gen_gaussian(&s, &mut Rng::new(2, 0)).unwrap();
        let d = img.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!((mean - 0.5).abs() < 4.0 * 0.2 / 64.0);
        let clipped = d.iter().filter(|v| **v == 0.0 || **v == 1.0).count() as f64 / d.len() as f64;
        assert!((clipped - 0.0124).abs() < 0.005, "clipped fraction {clipped}");
    }

    #[test]
    fn spectrum_normalized_to_unit_range() {
        let s = spec(NoiseFamily::Spectrum, 32, 3);
        let (img, alpha) = gen_spectrum(&s, (1.0, 2.0), &mut Rng::new(0, 0)).unwrap();
        assert!((1.0..=2.0).contains(&alpha));
        for c in 0..3 {
            let p = img.plane(c);
            let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn spectrum_rejects_bad_range() {
        let s = spec(NoiseFamily::Spectrum, 32, 1);
        let mut rng = Rng::new(0, 0);
        assert!(gen_spectrum(&s, (2.0, 1.0), &mut rng).is_err());
        assert!(gen_spectrum(&s, (-0.1, 1.0), &mut rng).is_err());
        assert!(gen_spectrum(&s, (1.0, 4.5), &mut rng).is_err());
    }

    fn mean_slope(alpha: f64, seeds: u64, n: usize) -> f64 {
        let s = spec(NoiseFamily::Spectrum, n, 1);
        (0..seeds)
            .map(|seed| {
                let (img, _) = gen_spectrum(&s, (alpha, alpha), &mut Rng::new(seed, 0)).unwrap();
                radial_power_spectrum(&img).unwrap().slope
            })
            .sum::<f64>()
            / seeds as f64
    }

    #[test]
    fn spectrum_slopes() {
        assert!(mean_slope(0.0, 16, 128).abs() < 0.15);
        assert!((mean_slope(2.0, 16, 128) + 2.0).abs() < 0.2);
    }

    #[test]
    fn family_separability() {
        let s = spec(NoiseFamily::Uniform, 128, 1);
        let uni = (0..16)
            .map(|seed| radial_power_spectrum(&generate(&s, seed).unwrap().0).unwrap().slope)
            .sum::<f64>()
            / 16.0;
        let spec2 = mean_slope(2.0, 16, 128);
        assert!(uni.abs() < 0.15 && spec2.abs() > 0.8);
    }

    #[test]
    fn dead_leaves_full_occlusion() {
        let s = spec(NoiseFamily::DeadLeavesSquares, 32, 3);
        let big = 64.0;
        let img = gen_dead_leaves_with(
            &s,
            DeadLeavesVariant::Squares,
            1,
            3.0,
            (big, big),
            Some((16.0, 16.0)),
            &mut Rng::new(0, 0),
        )
        .unwrap();
        let first = &img.data()[..3];
        assert!(img.data().chunks(3).all(|px| px == first));
        assert!(first.iter().all(|v| *v != 0.5));
    }

    #[test]
    fn dead_leaves_coverage_and_edges() {
        for family in [
            NoiseFamily::DeadLeavesSquares,
            NoiseFamily::DeadLeavesOriented,
            NoiseFamily::DeadLeavesMixed,
        ] {
            let s = spec(family, 128, 1);
            let mut uncovered = 0.0;
            for seed in 0..8 {
                let img = generate(&s, seed).unwrap().0;
                uncovered += img.data().iter().filter(|v| **v == 0.5).count() as f64
                    / img.data().len() as f64;
                let has_edge = (0..127).any(|r| {
                    (0..127).any(|c| (img.get(r, c, 0) - img.get(r, c + 1, 0)).abs() > 0.2)
                });
                assert!(has_edge);
            }
            assert!(uncovered / 8.0 < 0.01, "{family:?} uncovered {}", uncovered / 8.0);
        }
    }

    #[test]
    fn dead_leaves_heavier_tailed_than_uniform() {
        let dl = spec(NoiseFamily::DeadLeavesMixed, 128, 1);
        let un = spec(NoiseFamily::Uniform, 128, 1);
        let k_dl = (0..8).map(|s| gradient_kurtosis(&generate(&dl, s).unwrap().0)).sum::<f64>() / 8.0;
        let k_un = (0..8).map(|s| gradient_kurtosis(&generate(&un, s).unwrap().0)).sum::<f64>() / 8.0;
        assert!(k_dl > 3.0, "dead leaves kurtosis {k_dl}");
        assert!(k_un < 1.0, "uniform kurtosis {k_un}");
    }

    #[test]
    fn dead_leaves_rejects_bad_sizes() {
        let s = spec(NoiseFamily::DeadLeavesSquares, 32, 1);
        let mut rng = Rng::new(0, 0);
        assert!(gen_dead_leaves(&s, DeadLeavesVariant::Squares, 10, 3.0, (0.0, 4.0), &mut rng).is_err());
        assert!(gen_dead_leaves(&s, DeadLeavesVariant::Squares, 10, 3.0, (8.0, 4.0), &mut rng).is_err());
        assert!(gen_dead_leaves(&s, DeadLeavesVariant::Squares, 0, 3.0, (2.0, 4.0), &mut rng).is_err());
    }

    #[test]
    fn power_law_endpoints() {
        assert!((power_law_sample(4.0, 64.0, 3.0, 0.0) - 4.0).abs() < 1e-12);
        assert!((power_law_sample(4.0, 64.0, 3.0, 1.0) - 64.0).abs() < 1e-9);
        assert!((power_law_sample(4.0, 64.0, 1.0, 1.0) - 64.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_manifest_regenerates() {
        let s = spec(NoiseFamily::Spectrum, 32, 3);
        let c = gen_corpus(&s, 3).unwrap();
        let m = CorpusManifest::from_json(&c.manifest.to_json()).unwrap();
        assert_eq!(m, c.manifest);
        assert_eq!(m.regenerate().unwrap(), c.images);
        let streams: std::collections::HashSet<u64> = m.entries.iter().map(|e| e.stream).collect();
        assert_eq!(streams.len(), 3);
        assert!(m.entries.iter().all(|e| e.alpha.is_some()));
        assert_eq!(gen_corpus(&s, 1).unwrap().images.len(), 1);
        assert!(gen_corpus(&s, 0).is_err());
    }

    #[test]
    fn small_spec_rejected() {
        let s = NoiseSpec::new(NoiseFamily::Uniform, 8, 32, 1, 0);
        assert!(generate(&s, 0).is_err());
        let s = NoiseSpec::new(NoiseFamily::Uniform, 32, 32, 2, 0);
        assert!(generate(&s, 0).is_err());
    }
}
