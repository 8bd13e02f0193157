//! Denoising as an inverse-problem probe: photon-limited noise, fits with
//! oracle early stopping, and the fitting-versus-denoising tradeoff table.

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_coord_grid, ImageGrid};
use crate::metrics::{psnr, psnr_from_mse};
use crate::model::SineMlpParams;
use crate::rng::Rng;
use crate::training::{fit_with, FitConfig, FitTrace};

/// Additive readout std used with 30-photon Poisson noise; see the README
/// for how it was chosen.
pub const DEFAULT_READOUT_SIGMA: f64 = 0.063;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Mean photon count at intensity 1.0.
    pub photon_count: f64,
    /// Std of additive Gaussian readout noise, in intensity units.
    pub readout_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            photon_count: 30.0,
            readout_sigma: DEFAULT_READOUT_SIGMA,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.photon_count > 0.0 && self.photon_count.is_finite()) {
            return Err(Error::invalid("photon count must be positive"));
        }
        if !(self.readout_sigma >= 0.0 && self.readout_sigma.is_finite()) {
            return Err(Error::invalid("readout sigma must be non-negative"));
        }
        Ok(())
    }

    /// One noisy observation of intensity `v` before clipping.
    pub fn sample_unclipped(&self, v: f64, rng: &mut Rng) -> f64 {
        let lambda = self.photon_count * v;
        let k = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(rng)
        } else {
            0.0
        };
        let mut y = k / self.photon_count;
        if self.readout_sigma > 0.0 {
            y += Normal::new(0.0, self.readout_sigma).expect("finite sigma").sample(rng);
        }
        y
    }
}

/// `k ~ Poisson(p·v)`, `y = k/p + N(0, σ²)`, clipped to `[0, 1]`.
pub fn add_poisson_noise(clean: &ImageGrid, model: &NoiseModel, rng: &mut Rng) -> Result<ImageGrid> {
    model.validate()?;
    let data: Vec<f64> = clean
        .data()
        .iter()
        .map(|&v| model.sample_unclipped(v, rng))
        .collect();
    ImageGrid::from_clipped(clean.height(), clean.width(), clean.channels(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResult {
    pub best_psnr: f64,
    pub best_iteration: usize,
    /// PSNR column is measured against the clean image.
    pub trace: FitTrace,
    #[serde(skip)]
    pub denoised: Option<ImageGrid>,
}

impl DenoiseResult {
    pub fn final_psnr(&self) -> f64 {
        self.trace.final_psnr()
    }
}

/// Fits the noisy image; every recorded step is scored against `clean` and
/// the best one (earliest on ties) is returned along with its image.
pub fn denoise_fit(
    init: SineMlpParams,
    noisy: &ImageGrid,
    clean: &ImageGrid,
    config: &FitConfig,
) -> Result<DenoiseResult> {
    if !noisy.same_shape(clean) {
        return Err(Error::invalid("noisy and clean images differ in shape"));
    }
    let (h, w) = (clean.height(), clean.width());
    let grid = make_coord_grid(h, w)?;
    let target = noisy.to_matrix();
    let mut best: Option<(f64, usize, ImageGrid)> = None;
    let (_, trace) = fit_with(init, grid.points(), &target, config, |step, _, pred| {
        let img = ImageGrid::from_matrix(h, w, pred.view())?;
        let p = psnr(&img, clean, 1.0)?;
        if best.as_ref().is_none_or(|(b, _, _)| p > *b) {
            best = Some((p, step, img));
        }
        Ok((p, None))
    })?;
    let (best_psnr, best_iteration, img) = best.expect("step 0 is always recorded");
    Ok(DenoiseResult {
        best_psnr,
        best_iteration,
        trace,
        denoised: Some(img),
    })
}

/// Input PSNR of a noisy observation, for reporting.
pub fn noisy_input_psnr(noisy: &ImageGrid, clean: &ImageGrid) -> Result<f64> {
    Ok(psnr_from_mse(crate::metrics::mse(noisy, clean)?, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: String,
    pub fit_psnr: f64,
    pub denoise_psnr: f64,
    pub images: usize,
}

/// Per-method results over a common image set.
#[derive(Clone, Debug)]
pub struct MethodResults {
    pub method: String,
    pub image_ids: Vec<String>,
    /// Fitting PSNR at the iteration budget, per image.
    pub fit_psnr: Vec<f64>,
    /// Best early-stopped denoising PSNR, per image.
    pub denoise_psnr: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One `(mean fit PSNR, mean denoise PSNR)` row per method.
pub fn tradeoff_report(results: &[MethodResults]) -> Result<Vec<TradeoffRow>> {
    let first = results
        .first()
        .ok_or_else(|| Error::invalid("tradeoff report needs at least one method"))?;
    for r in results {
        if r.image_ids != first.image_ids {
            return Err(Error::invalid(format!(
                "method `{}` was evaluated on a different image set",
                r.method
            )));
        }
        if r.fit_psnr.len() != r.image_ids.len() || r.denoise_psnr.len() != r.image_ids.len() {
            return Err(Error::invalid(format!(
                "method `{}` has {} images but {} fit / {} denoise values",
                r.method,
                r.image_ids.len(),
                r.fit_psnr.len(),
                r.denoise_psnr.len()
            )));
        }
        if r.image_ids.is_empty() {
            return Err(Error::invalid("tradeoff report needs at least one image"));
        }
    }
    Ok(results
        .iter()
        .map(|r| TradeoffRow {
            method: r.method.clone(),
            fit_psnr: mean(&r.fit_psnr),
            denoise_psnr: mean(&r.denoise_psnr),
            images: r.image_ids.len(),
        })
        .collect())
}

/// True when the best fitting method is not the best denoising method.
pub fn has_inversion(rows: &[TradeoffRow]) -> bool {
    let argmax = |f: fn(&TradeoffRow) -> f64| {
        rows.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if f(r) > acc.1 { (i, f(r)) } else { acc })
            .0
    };
    rows.len() > 1 && argmax(|r| r.fit_psnr) != argmax(|r| r.denoise_psnr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_siren, Activation};
    use crate::training::fit;

    #[test]
    fn huge_photon_count_is_near_lossless() {
        let clean = crate::photos::pseudo_photo(16, 16, 3, 0, 0).unwrap();
        let m = NoiseModel { photon_count: 1e9, readout_sigma: 0.0 };
        let noisy = add_poisson_noise(&clean, &m, &mut Rng::new(0, 0)).unwrap();
        for (a, b) in noisy.data().iter().zip(clean.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn black_stays_black() {
        let clean = ImageGrid::filled(16, 16, 1, 0.0).unwrap();
        let m = NoiseModel { photon_count: 30.0, readout_sigma: 0.0 };
        let noisy = add_poisson_noise(&clean, &m, &mut Rng::new(0, 0)).unwrap();
        assert!(noisy.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reproducible_per_stream() {
        let clean = crate::photos::pseudo_photo(16, 16, 1, 0, 0).unwrap();
        let m = NoiseModel::default();
        let a = add_poisson_noise(&clean, &m, &mut Rng::new(3, 9)).unwrap();
        let b = add_poisson_noise(&clean, &m, &mut Rng::new(3, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mid_gray_input_psnr_matches_variance() {
        // var = v/p + σ² at v = 0.5; clipping is negligible at 3.5σ.
        let m = NoiseModel::default();
        let expected = -10.0 * (0.5 / 30.0 + m.readout_sigma.powi(2)).log10();
        let clean = ImageGrid::filled(64, 64, 1, 0.5).unwrap();
        let mean_psnr = (0..8)
            .map(|s| {
                let n = add_poisson_noise(&clean, &m, &mut Rng::new(s, 0)).unwrap();
                noisy_input_psnr(&n, &clean).unwrap()
            })
            .sum::<f64>()
            / 8.0;
        assert!((mean_psnr - expected).abs() < 0.15, "{mean_psnr} vs {expected}");
    }

    #[test]
    fn unbiased_before_clipping() {
        let m = NoiseModel::default();
        let mut rng = Rng::new(5, 0);
        for v in [0.2, 0.5, 0.8] {
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| m.sample_unclipped(v, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (v / m.photon_count + m.readout_sigma.powi(2)).sqrt();
            assert!((mean - v).abs() < 3.0 * sd / (n as f64).sqrt(), "v={v} mean={mean}");
        }
    }

    #[test]
    fn clean_input_denoise_equals_fit() {
        let clean = crate::photos::pseudo_photo(16, 16, 1, 0, 1).unwrap();
        let init = init_siren(&[2, 16, 16, 1], Activation::default(), &mut Rng::new(0, 0)).unwrap();
        let cfg = FitConfig::new(40, 1e-3, 5);
        let d = denoise_fit(init.clone(), &clean, &clean, &cfg).unwrap();
        let (params, trace) = fit(init, &clean, &cfg).unwrap();
        assert_eq!(d.best_iteration, 40);
        let rendered = crate::training::render(&params, 16, 16).unwrap();
        assert_eq!(d.best_psnr, psnr(&rendered, &clean, 1.0).unwrap());
        assert!(d.best_psnr >= trace.final_psnr() - 1e-9);
        assert!(d.best_psnr >= d.final_psnr());
    }

    #[test]
    fn tradeoff_rows() {
        let one = MethodResults {
            method: "siren".into(),
            image_ids: vec!["a".into()],
            fit_psnr: vec![30.0],
            denoise_psnr: vec![25.0],
        };
        let rows = tradeoff_report(std::slice::from_ref(&one)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].fit_psnr, rows[0].denoise_psnr), (30.0, 25.0));
        assert!(!has_inversion(&rows));

        let other = MethodResults {
            method: "snp-uniform".into(),
            image_ids: vec!["a".into()],
            fit_psnr: vec![40.0],
            denoise_psnr: vec![20.0],
        };
        assert!(has_inversion(&tradeoff_report(&[one.clone(), other]).unwrap()));

        let mismatched = MethodResults {
            method: "x".into(),
            image_ids: vec!["b".into()],
            fit_psnr: vec![1.0],
            denoise_psnr: vec![1.0],
        };
        assert!(tradeoff_report(&[one, mismatched]).is_err());
    }
}
