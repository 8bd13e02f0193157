//! Video fitting with a shared sine MLP plus per-frame low-rank residual
//! weights on the hidden layers: at frame `t`, layer `l` uses
//! `W_l + B_l(t)·A_l(t)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_coord_grid, ImageGrid};
use crate::inverse::DenoiseResult;
use crate::metrics::{psnr, psnr_from_mse};
use crate::model::{
    backward_layers_into, forward_layers_into, mse_grad, AdamState, ForwardCache, Gradients, LayerParams,
    SineMlpParams,
};
use crate::photos::pseudo_photo;
use crate::rng::Rng;
use crate::training::{FitConfig, FitTrace, TraceRow};

pub const DEFAULT_FACTOR_SIGMA: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoGrid {
    frames: Vec<ImageGrid>,
}

impl VideoGrid {
    pub fn new(frames: Vec<ImageGrid>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::invalid("a video needs at least one frame"))?;
        if frames.iter().any(|f| !f.same_shape(first)) {
            return Err(Error::invalid("video frames differ in shape"));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[ImageGrid] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &ImageGrid {
        &self.frames[t]
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }
}

/// Frame `t` of `frames` mapped into `[-1, 1]`; a single frame sits at 0.
pub fn frame_time(t: usize, frames: usize) -> f64 {
    if frames <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * t as f64 / (frames - 1) as f64
    }
}

/// A window sliding across a larger procedural scene, two pixels down and
/// one across per frame.
pub fn synthetic_video(frames: usize, height: usize, width: usize, channels: usize, seed: u64, index: u64) -> Result<VideoGrid> {
    if frames == 0 {
        return Err(Error::invalid("a video needs at least one frame"));
    }
    let (sh, sw) = (height + 2 * frames, width + frames);
    let scene = pseudo_photo(sh, sw, channels, seed, index)?;
    let out = (0..frames)
        .map(|t| {
            let mut data = Vec::with_capacity(height * width * channels);
            for r in 0..height {
                for c in 0..width {
                    for ch in 0..channels {
                        data.push(scene.get(r + 2 * t, c + t, ch));
                    }
                }
            }
            ImageGrid::new(height, width, channels, data)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoGrid::new(out)
}

/// Appends a zero-weight time input to the first layer, so the network
/// computes the same function of `(x, y)` for every `t`.
pub fn with_time_input(params: &SineMlpParams) -> Result<SineMlpParams> {
    let mut layers = params.layers().to_vec();
    let first = &layers[0].weights;
    let mut w = Array2::zeros((first.nrows(), first.ncols() + 1));
    w.slice_mut(ndarray::s![.., ..first.ncols()]).assign(first);
    layers[0].weights = w;
    SineMlpParams::from_layers(layers, params.activation())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFactors {
    /// `rank × fan_in`
    pub a: Array2<f64>,
    /// `fan_out × rank`
    pub b: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct ResFieldParams {
    pub shared: SineMlpParams,
    pub rank: usize,
    pub sigma: f64,
    /// Indices of the layers that carry residuals.
    pub residual_layers: Vec<usize>,
    /// `factors[t][k]` belongs to frame `t`, layer `residual_layers[k]`.
    pub factors: Vec<Vec<FrameFactors>>,
}

/// Residuals go on every layer but the first and last. `A ~ N(0, σ²)`,
/// `B = 0`.
pub fn build_resfield(shared_init: SineMlpParams, rank: usize, frames: usize, sigma: f64, rng: &mut Rng) -> Result<ResFieldParams> {
    if frames == 0 {
        return Err(Error::invalid("a video needs at least one frame"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("factor sigma must be non-negative"));
    }
    let depth = shared_init.depth();
    let residual_layers: Vec<usize> = (1..depth.saturating_sub(1)).collect();
    if rank > 0 {
        let min_width = residual_layers
            .iter()
            .map(|&l| {
                let w = &shared_init.layers()[l].weights;
                w.nrows().min(w.ncols())
            })
            .min();
        match min_width {
            Some(m) if rank <= m => {}
            Some(m) => {
                return Err(Error::invalid(format!("rank {rank} exceeds the narrowest residual layer ({m})")));
            }
            None => return Err(Error::invalid("network has no hidden-to-hidden layer to carry residuals")),
        }
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let factors = (0..frames)
        .map(|_| {
            residual_layers
                .iter()
                .map(|&l| {
                    let (out, inp) = shared_init.layers()[l].weights.dim();
                    FrameFactors {
                        a: Array2::from_shape_simple_fn((rank, inp), || normal.sample(rng)),
                        b: Array2::zeros((out, rank)),
                    }
                })
                .collect()
        })
        .collect();
    Ok(ResFieldParams {
        shared: shared_init,
        rank,
        sigma,
        residual_layers,
        factors,
    })
}

impl ResFieldParams {
    pub fn frames(&self) -> usize {
        self.factors.len()
    }

    pub fn param_count(&self) -> usize {
        let per_frame: usize = self.factors.first().map_or(0, |f| f.iter().map(|x| x.a.len() + x.b.len()).sum());
        self.shared.param_count() + self.frames() * per_frame
    }

    pub fn uses_time_input(&self) -> bool {
        self.shared.layout()[0] == 3
    }

    /// Effective layers of frame `t`, written into `out`.
    pub fn effective_layers_into(&self, t: usize, out: &mut Vec<LayerParams>) {
        if out.len() != self.shared.depth() {
            *out = self.shared.layers().to_vec();
        } else {
            for (dst, src) in out.iter_mut().zip(self.shared.layers()) {
                dst.weights.assign(&src.weights);
                dst.biases.assign(&src.biases);
            }
        }
        if self.rank == 0 {
            return;
        }
        for (k, &l) in self.residual_layers.iter().enumerate() {
            let f = &self.factors[t][k];
            general_mat_mul(1.0, &f.b, &f.a, 1.0, &mut out[l].weights);
        }
    }

    pub fn effective_layers(&self, t: usize) -> Vec<LayerParams> {
        let mut out = Vec::new();
        self.effective_layers_into(t, &mut out);
        out
    }

    /// Network output for frame `t` on the image lattice.
    pub fn predict_frame(&self, t: usize, height: usize, width: usize) -> Result<Array2<f64>> {
        let coords = frame_coords(self, t, height, width)?;
        let mut cache = ForwardCache::default();
        forward_layers_into(&self.effective_layers(t), self.shared.activation(), coords.view(), false, &mut cache)?;
        Ok(cache.output().to_owned())
    }
}

fn frame_coords(params: &ResFieldParams, t: usize, height: usize, width: usize) -> Result<Array2<f64>> {
    let grid = make_coord_grid(height, width)?;
    Ok(if params.uses_time_input() {
        grid.with_extra(frame_time(t, params.frames()))
    } else {
        grid.points().to_owned()
    })
}

fn factor_adam(factors: &[FrameFactors], lr: f64) -> AdamState {
    let sizes: Vec<usize> = factors.iter().flat_map(|f| [f.a.len(), f.b.len()]).collect();
    AdamState::new(&sizes, lr)
}

/// Round-robin frame updates; each step trains the shared weights and the
/// visited frame's factors. Every frame has its own Adam state, stepped
/// only when that frame is visited. `observe(frame, step, loss, pred)`
/// supplies the PSNR of each recorded row.
fn fit_video_with<F>(
    mut params: ResFieldParams,
    video: &VideoGrid,
    config: &FitConfig,
    mut observe: F,
) -> Result<(ResFieldParams, Vec<FitTrace>)>
where
    F: FnMut(usize, usize, f64, &Array2<f64>) -> Result<f64>,
{
    config.validate()?;
    let frames = video.len();
    if params.frames() != frames {
        return Err(Error::invalid(format!(
            "model has {} frames, video has {frames}",
            params.frames()
        )));
    }
    let d_out = *params.shared.layout().last().unwrap();
    if d_out != video.channels() {
        return Err(Error::invalid(format!(
            "network produces {d_out} channels, video has {}",
            video.channels()
        )));
    }
    let d_in = params.shared.layout()[0];
    if d_in != 2 && d_in != 3 {
        return Err(Error::invalid("video networks take (x, y) or (x, y, t) inputs"));
    }
    let (h, w) = (video.height(), video.width());
    let coords: Vec<Array2<f64>> = (0..frames)
        .map(|t| frame_coords(&params, t, h, w))
        .collect::<Result<_>>()?;
    let targets: Vec<Array2<f64>> = video.frames().iter().map(ImageGrid::to_matrix).collect();
    let act = params.shared.activation();

    let mut shared_adam = AdamState::for_layers(params.shared.layers(), config.lr);
    let mut frame_adams: Vec<AdamState> = params.factors.iter().map(|f| factor_adam(f, config.lr)).collect();
    let mut traces = vec![FitTrace::default(); frames];
    let mut layers = Vec::new();
    let mut cache = ForwardCache::default();
    let mut grads = Gradients::default();
    let mut factor_grads: Vec<FrameFactors> = params.factors[0].clone();

    for step in 0..=config.iterations {
        if config.records(step) {
            for t in 0..frames {
                params.effective_layers_into(t, &mut layers);
                forward_layers_into(&layers, act, coords[t].view(), false, &mut cache)?;
                let pred = cache.output().to_owned();
                let (loss, _) = mse_grad(pred.view(), &targets[t]);
                if !loss.is_finite() {
                    return Err(Error::NonFinite { what: "loss", iteration: step });
                }
                let p = observe(t, step, loss, &pred)?;
                traces[t].rows.push(TraceRow {
                    iteration: step,
                    loss,
                    psnr: p,
                    ssim: None,
                });
            }
        }
        if step == config.iterations {
            break;
        }
        let t = step % frames;
        params.effective_layers_into(t, &mut layers);
        forward_layers_into(&layers, act, coords[t].view(), false, &mut cache)?;
        let (loss, grad) = mse_grad(cache.output(), &targets[t]);
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", iteration: step });
        }
        backward_layers_into(&layers, &cache, grad.view(), &mut grads)?;
        let lr = config.lr_at(step);

        if params.rank > 0 {
            for (k, &l) in params.residual_layers.iter().enumerate() {
                let g = &grads.layers[l].weights;
                let f = &params.factors[t][k];
                let fg = &mut factor_grads[k];
                general_mat_mul(1.0, &f.b.t(), g, 0.0, &mut fg.a);
                general_mat_mul(1.0, g, &f.a.t(), 0.0, &mut fg.b);
            }
            let mut ps: Vec<&mut [f64]> = Vec::new();
            for f in params.factors[t].iter_mut() {
                ps.push(f.a.as_slice_mut().expect("standard layout"));
                ps.push(f.b.as_slice_mut().expect("standard layout"));
            }
            let gs: Vec<&[f64]> = factor_grads
                .iter()
                .flat_map(|f| [f.a.as_slice().expect("standard layout"), f.b.as_slice().expect("standard layout")])
                .collect();
            frame_adams[t].lr = lr;
            frame_adams[t].step(&mut ps, &gs, step)?;
        }
        shared_adam.lr = lr;
        shared_adam.step_layers(params.shared.layers_mut().iter_mut(), &grads.refs(), step)?;
    }
    Ok((params, traces))
}

/// Fits every frame; returns one trace per frame.
pub fn fit_video(params: ResFieldParams, video: &VideoGrid, config: &FitConfig) -> Result<(ResFieldParams, Vec<FitTrace>)> {
    fit_video_with(params, video, config, |_, _, loss, _| Ok(psnr_from_mse(loss, 1.0)))
}

/// Mean over frames of each frame's final PSNR.
pub fn mean_final_psnr(traces: &[FitTrace]) -> f64 {
    traces.iter().map(FitTrace::final_psnr).sum::<f64>() / traces.len() as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoDenoiseResult {
    /// Per frame, scored against the clean frame with its own best step.
    pub frames: Vec<DenoiseResult>,
    /// Step with the highest mean PSNR over frames.
    pub best_iteration: usize,
    pub best_mean_psnr: f64,
}

impl VideoDenoiseResult {
    pub fn mean_best_psnr(&self) -> f64 {
        self.frames.iter().map(|f| f.best_psnr).sum::<f64>() / self.frames.len() as f64
    }
}

/// Fits the noisy frames and scores every recorded step against the clean
/// ones.
pub fn denoise_video(params: ResFieldParams, noisy: &VideoGrid, clean: &VideoGrid, config: &FitConfig) -> Result<VideoDenoiseResult> {
    if noisy.len() != clean.len() || !noisy.frame(0).same_shape(clean.frame(0)) {
        return Err(Error::invalid("noisy and clean videos differ in shape"));
    }
    let (h, w) = (clean.height(), clean.width());
    let mut best: Vec<Option<(f64, usize, ImageGrid)>> = vec![None; clean.len()];
    let (_, traces) = fit_video_with(params, noisy, config, |t, step, _, pred| {
        let img = ImageGrid::from_matrix(h, w, pred.view())?;
        let p = psnr(&img, clean.frame(t), 1.0)?;
        if best[t].as_ref().is_none_or(|(b, _, _)| p > *b) {
            best[t] = Some((p, step, img));
        }
        Ok(p)
    })?;
    let rows = traces[0].rows.len();
    let (mut best_iteration, mut best_mean_psnr) = (0, f64::NEG_INFINITY);
    for r in 0..rows {
        let m = traces.iter().map(|tr| tr.rows[r].psnr).sum::<f64>() / traces.len() as f64;
        if m > best_mean_psnr {
            best_mean_psnr = m;
            best_iteration = traces[0].rows[r].iteration;
        }
    }
    let frames = traces
        .into_iter()
        .zip(best)
        .map(|(trace, b)| {
            let (best_psnr, best_iteration, img) = b.expect("step 0 is always recorded");
            DenoiseResult {
                best_psnr,
                best_iteration,
                trace,
                denoised: Some(img),
            }
        })
        .collect();
    Ok(VideoDenoiseResult {
        frames,
        best_iteration,
        best_mean_psnr,
    })
}

/// Stacks frames along the row axis, for export.
pub fn stack_rows(frames: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("frames share a width")
}
