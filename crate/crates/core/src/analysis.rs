//! Empirical NTK spectra and filter-normalized loss-landscape slices.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_coord_grid, ImageGrid};
use crate::metrics::mse_slices;
use crate::model::{ForwardCache, Gradients, LayerParams, SineMlpParams};
use crate::rng::Rng;

/// Largest kernel size accepted by [`compute_ntk`].
pub const MAX_NTK_OUTPUTS: usize = 4096;

fn check_outputs(params: &SineMlpParams, coords: ArrayView2<f64>) -> Result<usize> {
    let d_out = params.layout()[params.layout().len() - 1];
    let p = coords.nrows() * d_out;
    if p > MAX_NTK_OUTPUTS {
        return Err(Error::invalid(format!(
            "NTK over {p} outputs exceeds the dense limit of {MAX_NTK_OUTPUTS}; subsample the coordinates"
        )));
    }
    if p == 0 {
        return Err(Error::invalid("NTK needs at least one coordinate"));
    }
    Ok(d_out)
}

/// Per output channel, the per-sample pre-activation gradients of every layer,
/// plus the forward cache they came from.
fn channel_deltas(params: &SineMlpParams, coords: ArrayView2<f64>, d_out: usize) -> Result<(ForwardCache, Vec<Vec<Array2<f64>>>)> {
    let mut cache = ForwardCache::default();
    params.forward_into(coords, &mut cache)?;
    let n = coords.nrows();
    let mut grads = Gradients::default();
    let mut out = Vec::with_capacity(d_out);
    for c in 0..d_out {
        let mut seed = Array2::zeros((n, d_out));
        seed.column_mut(c).fill(1.0);
        params.backward_into(&cache, seed.view(), &mut grads)?;
        out.push(grads.deltas().to_vec());
    }
    Ok((cache, out))
}

fn layer_input(cache: &ForwardCache, layer: usize) -> ArrayView2<'_, f64> {
    if layer == 0 {
        cache.input.view()
    } else {
        cache.post[layer - 1].view()
    }
}

/// Jacobian of every output (row `pixel * d_out + channel`) with respect to
/// every parameter, in [`LayerParams::values`] order layer by layer.
pub fn jacobian(params: &SineMlpParams, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
    let d_out = check_outputs(params, coords)?;
    let (cache, deltas) = channel_deltas(params, coords, d_out)?;
    let n = coords.nrows();
    let mut jac = Array2::zeros((n * d_out, params.param_count()));
    for (c, per_layer) in deltas.iter().enumerate() {
        for i in 0..n {
            let mut row = jac.row_mut(i * d_out + c);
            let mut offset = 0;
            for (l, layer) in params.layers().iter().enumerate() {
                let a = layer_input(&cache, l);
                let d = &per_layer[l];
                let (fo, fi) = layer.weights.dim();
                for o in 0..fo {
                    for k in 0..fi {
                        row[offset + o * fi + k] = d[[i, o]] * a[[i, k]];
                    }
                }
                offset += fo * fi;
                for o in 0..fo {
                    row[offset + o] = d[[i, o]];
                }
                offset += fo;
            }
        }
    }
    Ok(jac)
}

/// `K = J Jᵀ`, assembled layer by layer as `(D Dᵀ) ∘ (A Aᵀ + 1)` so the full
/// Jacobian is never stored.
pub fn compute_ntk(params: &SineMlpParams, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
    let d_out = check_outputs(params, coords)?;
    let (cache, deltas) = channel_deltas(params, coords, d_out)?;
    let n = coords.nrows();
    let p = n * d_out;
    let mut k = Array2::<f64>::zeros((p, p));
    for l in 0..params.depth() {
        let a = layer_input(&cache, l);
        let mut gram = a.dot(&a.t());
        gram += 1.0;
        for c1 in 0..d_out {
            for c2 in 0..d_out {
                let dd = deltas[c1][l].dot(&deltas[c2][l].t());
                for i in 0..n {
                    for j in 0..n {
                        k[[i * d_out + c1, j * d_out + c2]] += gram[[i, j]] * dd[[i, j]];
                    }
                }
            }
        }
    }
    let sym = (&k + &k.t()) * 0.5;
    Ok(sym)
}

#[derive(Clone, Debug)]
pub struct NtkSpectrum {
    pub kernel: Array2<f64>,
    /// Descending.
    pub eigenvalues: Array1<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Array2<f64>,
    /// `target_energy[k]` is the fraction of the target captured by the top
    /// `k + 1` eigenvectors.
    pub target_energy: Vec<f64>,
}

impl NtkSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Energy captured by the eigenvalues above the `percentile`-th
    /// percentile, i.e. the top `(1 - percentile/100)` fraction of modes.
    pub fn energy_at_percentile(&self, percentile: f64) -> f64 {
        let p = self.len() as f64;
        let keep = ((1.0 - percentile.clamp(0.0, 100.0) / 100.0) * p).round() as usize;
        if keep == 0 {
            0.0
        } else {
            self.target_energy[keep - 1]
        }
    }

    /// `(percentile, energy)` from 100 down to 0 in unit steps; the last
    /// row always carries the full energy.
    pub fn percentile_curve(&self) -> Vec<(f64, f64)> {
        (0..=100)
            .rev()
            .map(|p| (p as f64, self.energy_at_percentile(p as f64)))
            .collect()
    }
}

/// Eigendecomposes `kernel` and accumulates the energy of `target` along the
/// eigenvectors in descending-eigenvalue order.
pub fn ntk_energy_curve(kernel: Array2<f64>, target: &[f64]) -> Result<NtkSpectrum> {
    let p = kernel.nrows();
    if kernel.ncols() != p {
        return Err(Error::invalid("kernel must be square"));
    }
    if target.len() != p {
        return Err(Error::invalid(format!(
            "target has {} entries but the kernel is {p}×{p}",
            target.len()
        )));
    }
    let norm2: f64 = target.iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Err(Error::invalid("target has zero energy"));
    }
    let scale = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
    let asym = kernel
        .iter()
        .zip(kernel.t().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if asym > 1e-10 * scale.max(1.0) {
        return Err(Error::invalid("kernel is not symmetric"));
    }

    let m = DMatrix::from_fn(p, p, |i, j| kernel[[i, j]]);
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = Array2::from_shape_fn((p, p), |(r, c)| eig.eigenvectors[(r, order[c])]);

    for (c, &lambda) in eigenvalues.iter().enumerate() {
        let v = eigenvectors.column(c);
        let kv = kernel.dot(&v);
        let resid = kv
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(format!("eigenpair {c} residual {resid:e} too large")));
        }
    }

    let y = Array1::from(target.to_vec());
    let proj = eigenvectors.t().dot(&y);
    let mut acc = 0.0;
    let target_energy = proj
        .iter()
        .map(|c| {
            acc += c * c;
            acc / norm2
        })
        .collect();
    Ok(NtkSpectrum {
        kernel,
        eigenvalues,
        eigenvectors,
        target_energy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub seed: u64,
    pub stream: u64,
    /// Index of this direction among the draws from that generator.
    pub draw: usize,
    pub normalization: String,
}

#[derive(Clone, Debug)]
pub struct LandscapeSlice {
    pub resolution: usize,
    pub span: f64,
    /// Offsets along each direction; `axis[(R-1)/2] == 0`.
    pub axis: Vec<f64>,
    /// `loss[[i, j]]` is at `a = axis[i]`, `b = axis[j]`.
    pub loss: Array2<f64>,
    pub directions: [DirectionRecord; 2],
}

impl LandscapeSlice {
    pub fn center(&self) -> f64 {
        let c = (self.resolution - 1) / 2;
        self.loss[[c, c]]
    }

    /// Grid cell of the smallest loss.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for ((i, j), v) in self.loss.indexed_iter() {
            if *v < self.loss[best] {
                best = (i, j);
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.loss.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

pub const DEFAULT_LANDSCAPE_RESOLUTION: usize = 41;
pub const DEFAULT_LANDSCAPE_SPAN: f64 = 1.0;

fn row_normalized(mut dir: Array2<f64>, reference: &Array2<f64>) -> Array2<f64> {
    for (mut d, p) in dir.axis_iter_mut(Axis(0)).zip(reference.axis_iter(Axis(0))) {
        let pn = p.dot(&p).sqrt();
        let dn = d.dot(&d).sqrt();
        if pn == 0.0 || dn == 0.0 {
            d.fill(0.0);
        } else {
            d *= pn / dn;
        }
    }
    dir
}

/// Gaussian direction with each weight row, and each bias vector as a whole,
/// rescaled to the norm of the matching parameter row.
pub fn filter_normalized_direction(layers: &[LayerParams], rng: &mut Rng) -> Vec<LayerParams> {
    layers
        .iter()
        .map(|l| {
            let w = Array2::from_shape_simple_fn(l.weights.dim(), || StandardNormal.sample(rng));
            let b = Array2::from_shape_simple_fn((1, l.biases.len()), || StandardNormal.sample(rng));
            let bref = l.biases.view().insert_axis(Axis(0)).to_owned();
            LayerParams {
                weights: row_normalized(w, &l.weights),
                biases: row_normalized(b, &bref).remove_axis(Axis(0)),
            }
        })
        .collect()
}

/// MSE over the image grid at `params + a·d1 + b·d2` for every `(a, b)` cell
/// of an `R×R` grid over `[-span, span]²`.
pub fn loss_landscape(
    params: &SineMlpParams,
    target: &ImageGrid,
    resolution: usize,
    span: f64,
    rng: &mut Rng,
) -> Result<LandscapeSlice> {
    if resolution.is_multiple_of(2) || resolution == 0 || resolution > 101 {
        return Err(Error::invalid("landscape resolution must be odd and at most 101"));
    }
    if !(span > 0.0 && span.is_finite()) {
        return Err(Error::invalid("landscape span must be positive"));
    }
    let d_out = params.layout()[params.layout().len() - 1];
    if target.channels() != d_out {
        return Err(Error::invalid("target channels do not match the network output"));
    }
    let record = |draw| DirectionRecord {
        seed: rng.seed(),
        stream: rng.stream(),
        draw,
        normalization: "filter".into(),
    };
    let directions = [record(0), record(1)];
    let d1 = filter_normalized_direction(params.layers(), rng);
    let d2 = filter_normalized_direction(params.layers(), rng);

    let grid = make_coord_grid(target.height(), target.width())?;
    let coords = grid.points();
    let flat = target.to_matrix();
    let half = (resolution - 1) / 2;
    let axis: Vec<f64> = (0..resolution)
        .map(|i| span * (i as f64 - half as f64) / half.max(1) as f64)
        .collect();
    let mut loss = Array2::zeros((resolution, resolution));
    let mut cache = ForwardCache::default();
    let mut probe = params.clone();
    for (i, &a) in axis.iter().enumerate() {
        for (j, &b) in axis.iter().enumerate() {
            for ((dst, base), (u, v)) in probe
                .layers_mut()
                .iter_mut()
                .zip(params.layers())
                .zip(d1.iter().zip(&d2))
            {
                dst.weights.assign(&base.weights);
                dst.weights.scaled_add(a, &u.weights);
                dst.weights.scaled_add(b, &v.weights);
                dst.biases.assign(&base.biases);
                dst.biases.scaled_add(a, &u.biases);
                dst.biases.scaled_add(b, &v.biases);
            }
            probe.forward_into(coords, &mut cache)?;
            let out = cache.output();
            loss[[i, j]] = mse_slices(
                out.as_slice().expect("contiguous output"),
                flat.as_slice().expect("contiguous target"),
            );
        }
    }
    Ok(LandscapeSlice {
        resolution,
        span,
        axis,
        loss,
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_siren, Activation, ActivationKind};
    use ndarray::array;
    use crate::rng::Rng;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn small_net(seed: u64, layout: &[usize]) -> SineMlpParams {
        init_siren(layout, Activation::default(), &mut Rng::new(seed, 0)).unwrap()
    }

    fn coords(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = Rng::new(seed, 99);
        Array2::from_shape_simple_fn((n, 2), || rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn linear_model_closed_form() {
        let layer = LayerParams {
            weights: array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]],
            biases: array![0.1, 0.0, -0.3],
        };
        let net = SineMlpParams::from_layers(vec![layer], Activation::default()).unwrap();
        let x = coords(7, 1);
        let k = compute_ntk(&net, x.view()).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let g = x.row(i).dot(&x.row(j)) + 1.0;
                for c1 in 0..3 {
                    for c2 in 0..3 {
                        let want = if c1 == c2 { g } else { 0.0 };
                        assert!((k[[i * 3 + c1, j * 3 + c2]] - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_is_jacobian_gram() {
        let net = small_net(4, &[2, 8, 8, 3]);
        let x = coords(10, 2);
        let j = jacobian(&net, x.view()).unwrap();
        let k = compute_ntk(&net, x.view()).unwrap();
        let jj = j.dot(&j.t());
        let scale = jj.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in k.iter().zip(jj.iter()) {
            assert!((a - b).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn finite_difference_gram() {
        let net = small_net(5, &[2, 8, 1]);
        let x = coords(12, 3);
        let k = compute_ntk(&net, x.view()).unwrap();
        let count = net.param_count();
        let h = 1e-6;
        let mut jac = Array2::<f64>::zeros((12, count));
        let mut idx = 0;
        for l in 0..net.depth() {
            let (fo, fi) = net.layers()[l].weights.dim();
            for pos in 0..fo * fi + fo {
                let bump = |delta: f64| {
                    let mut p = net.clone();
                    let layer = &mut p.layers_mut()[l];
                    if pos < fo * fi {
                        layer.weights[[pos / fi, pos % fi]] += delta;
                    } else {
                        layer.biases[pos - fo * fi] += delta;
                    }
                    p.predict(x.view()).unwrap()
                };
                let d = (bump(h) - bump(-h)) / (2.0 * h);
                jac.column_mut(idx).assign(&d.column(0));
                idx += 1;
            }
        }
        let fd = jac.dot(&jac.t());
        let err = (&fd - &k).iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-5, "relative error {}", err / norm);
    }

    #[test]
    fn guard_rejects_large_grids() {
        let net = small_net(0, &[2, 4, 3]);
        let x = Array2::zeros((1366, 2));
        assert!(compute_ntk(&net, x.view()).is_err());
    }

    #[test]
    fn spectrum_properties() {
        for kind in [ActivationKind::Sine, ActivationKind::Finer] {
            let act = Activation { kind, ..Activation::default() };
            let net = init_siren(&[2, 16, 16, 1], act, &mut Rng::new(9, 0)).unwrap();
            let x = coords(40, 4);
            let k = compute_ntk(&net, x.view()).unwrap();
            let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
            let s = ntk_energy_curve(k, &y).unwrap();
            assert!(s.eigenvalues.iter().all(|v| *v >= -1e-8));
            assert!(s.eigenvalues.windows(2).into_iter().all(|w| w[0] >= w[1]));
            assert!(s.target_energy.windows(2).all(|w| w[1] >= w[0] - 1e-15));
            assert!((s.target_energy[39] - 1.0).abs() < 1e-9);
            let curve = s.percentile_curve();
            assert_eq!(curve.last().unwrap().0, 0.0);
            assert!((curve.last().unwrap().1 - 1.0).abs() < 1e-9);
            assert_eq!(curve[0].1, 0.0);
        }
    }

    #[test]
    fn top_eigenvector_target() {
        let net = small_net(1, &[2, 8, 1]);
        let k = compute_ntk(&net, coords(20, 5).view()).unwrap();
        let s = ntk_energy_curve(k.clone(), &[1.0; 20]).unwrap();
        let top: Vec<f64> = s.eigenvectors.column(0).to_vec();
        let t = ntk_energy_curve(k, &top).unwrap();
        assert!((t.target_energy[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn energy_curve_errors() {
        let k = Array2::eye(3);
        assert!(ntk_energy_curve(k.clone(), &[0.0; 3]).is_err());
        assert!(ntk_energy_curve(k, &[1.0; 4]).is_err());
        assert!(ntk_energy_curve(array![[1.0, 2.0], [0.0, 1.0]], &[1.0, 1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn permuting_coordinates_permutes_kernel(seed in 0u64..1000, shift in 1usize..9) {
            let net = small_net(seed, &[2, 6, 2]);
            let x = coords(9, seed);
            let perm: Vec<usize> = (0..9).map(|i| (i * 2 + shift) % 9).collect();
            let xp = Array2::from_shape_fn((9, 2), |(i, c)| x[[perm[i], c]]);
            let k = compute_ntk(&net, x.view()).unwrap();
            let kp = compute_ntk(&net, xp.view()).unwrap();
            for i in 0..9 { for j in 0..9 { for a in 0..2 { for b in 0..2 {
                prop_assert!((kp[[i * 2 + a, j * 2 + b]] - k[[perm[i] * 2 + a, perm[j] * 2 + b]]).abs() < 1e-12);
            }}}}
        }
    }

    #[test]
    fn filter_normalization_matches_rows() {
        let mut net = small_net(2, &[2, 8, 8, 1]);
        net.layers_mut()[1].weights.row_mut(3).fill(0.0);
        let d = filter_normalized_direction(net.layers(), &mut Rng::new(0, 0));
        for (dl, pl) in d.iter().zip(net.layers()) {
            for (dr, pr) in dl.weights.rows().into_iter().zip(pl.weights.rows()) {
                assert!((dr.dot(&dr).sqrt() - pr.dot(&pr).sqrt()).abs() < 1e-12);
            }
            assert!((dl.biases.dot(&dl.biases).sqrt() - pl.biases.dot(&pl.biases).sqrt()).abs() < 1e-12);
        }
        assert!(d[1].weights.row(3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn landscape_center_and_guards() {
        let net = small_net(3, &[2, 8, 8, 1]);
        let target = crate::photos::pseudo_photo(16, 16, 1, 0, 0).unwrap();
        let s = loss_landscape(&net, &target, 5, 1.0, &mut Rng::new(1, 2)).unwrap();
        let grid = make_coord_grid(16, 16).unwrap();
        let pred = net.predict(grid.points()).unwrap();
        let want = mse_slices(pred.as_slice().unwrap(), target.to_matrix().as_slice().unwrap());
        assert_eq!(s.center(), want);
        assert_eq!(s.loss.dim(), (5, 5));
        assert_eq!(s.axis, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(s.directions[0].seed, 1);
        assert!(loss_landscape(&net, &target, 4, 1.0, &mut Rng::new(1, 2)).is_err());
        assert!(loss_landscape(&net, &target, 103, 1.0, &mut Rng::new(1, 2)).is_err());
    }
}
