//! Straight-line reference implementations used as test oracles. None of
//! them share code with the library beyond its data types.

#![allow(dead_code)]

use snp_core::model::{LayerParams, SineMlpParams};
use snp_core::{ActivationKind, ImageGrid, Rng};

/// Plain Adam, one scalar at a time.
pub fn reference_adam(x0: &[f64], grad: impl Fn(&[f64]) -> Vec<f64>, steps: usize, lr: f64) -> Vec<Vec<f64>> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(&x);
        for i in 0..x.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
        out.push(x.clone());
    }
    out
}

/// SSIM with an explicit 2-D Gaussian window (11×11, σ = 1.5), valid
/// placement only, averaged over windows and channels.
pub fn reference_ssim(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let (k1, k2) = (0.01f64, 0.03f64);
    let (c1, c2) = (k1 * k1, k2 * k2);
    let n = 11usize;
    let mut w = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *cell = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *cell;
        }
    }
    for row in w.iter_mut() {
        for cell in row.iter_mut() {
            *cell /= total;
        }
    }
    let (h, wd, ch) = (a.height(), a.width(), a.channels());
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        for r0 in 0..=h - n {
            for q0 in 0..=wd - n {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        mx += w[i][j] * a.get(r0 + i, q0 + j, c);
                        my += w[i][j] * b.get(r0 + i, q0 + j, c);
                    }
                }
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let dx = a.get(r0 + i, q0 + j, c) - mx;
                        let dy = b.get(r0 + i, q0 + j, c) - my;
                        sxx += w[i][j] * dx * dx;
                        syy += w[i][j] * dy * dy;
                        sxy += w[i][j] * dx * dy;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn act(kind: ActivationKind, omega: f64, z: f64) -> f64 {
    match kind {
        ActivationKind::Sine => (omega * z).sin(),
        ActivationKind::Finer => (omega * (z.abs() + 1.0) * z).sin(),
    }
}

/// Scalar-loop forward pass for one coordinate.
pub fn reference_forward(net: &SineMlpParams, x: &[f64]) -> Vec<f64> {
    forward_with_signs(net, x, &mut Vec::new())
}

/// As [`reference_forward`], appending the sign of every activated
/// pre-activation to `signs`.
fn forward_with_signs(net: &SineMlpParams, x: &[f64], signs: &mut Vec<bool>) -> Vec<f64> {
    let a = net.activation();
    let mut h = x.to_vec();
    let depth = net.depth();
    for (l, layer) in net.layers().iter().enumerate() {
        let (out, inp) = layer.weights.dim();
        let mut z = vec![0.0; out];
        for o in 0..out {
            let mut s = layer.biases[o];
            for k in 0..inp {
                s += layer.weights[[o, k]] * h[k];
            }
            z[o] = if l + 1 < depth {
                signs.push(s >= 0.0);
                act(a.kind, a.omega, s)
            } else {
                s
            };
        }
        h = z;
    }
    h
}

fn param_mut(layers: &mut [LayerParams], mut idx: usize) -> &mut f64 {
    for l in layers {
        let (w, b) = (l.weights.len(), l.biases.len());
        if idx < w {
            return &mut l.weights.as_slice_mut().unwrap()[idx];
        }
        idx -= w;
        if idx < b {
            return &mut l.biases[idx];
        }
        idx -= b;
    }
    panic!("parameter index out of range")
}

fn mse_of(net: &SineMlpParams, coords: &[[f64; 2]], target: &[f64], signs: &mut Vec<bool>) -> f64 {
    let d_out = *net.layout().last().unwrap();
    let mut s = 0.0;
    for (i, x) in coords.iter().enumerate() {
        let y = forward_with_signs(net, x, signs);
        for c in 0..d_out {
            let d = y[c] - target[i * d_out + c];
            s += d * d;
        }
    }
    s / target.len() as f64
}

/// Largest relative disagreement between the library's backward pass and a
/// fourth-order central difference of the MSE, over every parameter. FINER
/// has a second-derivative jump at zero, so the step is shrunk until no
/// pre-activation changes sign inside the stencil.
/// Denominators are floored at `floor` times the largest gradient entry,
/// since tiny entries cannot be resolved by differencing in 64-bit.
pub fn gradient_check(net: &SineMlpParams, seed: u64, floor: f64) -> f64 {
    let mut rng = Rng::new(seed, 77);
    let coords: Vec<[f64; 2]> = (0..12).map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]).collect();
    let d_out = *net.layout().last().unwrap();
    let target: Vec<f64> = (0..coords.len() * d_out).map(|_| rng.uniform(0.0, 1.0)).collect();

    let x = ndarray::Array2::from_shape_fn((coords.len(), 2), |(i, j)| coords[i][j]);
    let (pred, cache) = net.forward(x.view()).unwrap();
    let t = ndarray::Array2::from_shape_vec((coords.len(), d_out), target.clone()).unwrap();
    let (_, g) = snp_core::model::mse_grad(pred.view(), &t);
    let grads = net.backward(&cache, g.view()).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|l| l.values()).collect();

    let floor = floor * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut base_signs = Vec::new();
    mse_of(net, &coords, &target, &mut base_signs);
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let eval = |delta: f64, crossed: &mut bool| {
            let mut p = net.clone();
            *param_mut(p.layers_mut(), i) += delta;
            let mut signs = Vec::new();
            let v = mse_of(&p, &coords, &target, &mut signs);
            *crossed |= signs != base_signs;
            v
        };
        let mut h = 1e-5;
        let fd = loop {
            let mut crossed = false;
            let d = (-eval(2.0 * h, &mut crossed) + 8.0 * eval(h, &mut crossed) - 8.0 * eval(-h, &mut crossed)
                + eval(-2.0 * h, &mut crossed))
                / (12.0 * h);
            if !crossed || h < 1e-9 {
                break d;
            }
            h /= 4.0;
        };
        let denom = a.abs().max(fd.abs()).max(floor);
        worst = worst.max((a - fd).abs() / denom);
    }
    worst
}
