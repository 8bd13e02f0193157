use serde::{Deserialize, Serialize};

use super::LayerParams;
use crate::error::{Error, Result};

/// Bias-corrected Adam over an ordered list of parameter tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// One moment buffer per entry of `sizes`.
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Two tensors (weights, biases) per layer.
    pub fn for_layers<'a>(layers: impl IntoIterator<Item = &'a LayerParams>, lr: f64) -> Self {
        let sizes: Vec<usize> = layers
            .into_iter()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .collect();
        Self::new(&sizes, lr)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Applies one update. `params[k]` and `grads[k]` must match the k-th
    /// buffer size. `iteration` only labels the error on non-finite input.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], iteration: usize) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::invalid(format!("adam tensor {k} size mismatch")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    iteration,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Updates layers in place; `layers` and `grads` pair up in order.
    pub fn step_layers<'a>(
        &mut self,
        layers: impl IntoIterator<Item = &'a mut LayerParams>,
        grads: &[&LayerParams],
        iteration: usize,
    ) -> Result<()> {
        let mut params: Vec<&mut [f64]> = Vec::new();
        for l in layers {
            let LayerParams { weights, biases } = l;
            params.push(weights.as_slice_mut().expect("standard layout"));
            params.push(biases.as_slice_mut().expect("standard layout"));
        }
        let g: Vec<&[f64]> = grads
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.biases.as_slice().expect("standard layout"),
                ]
            })
            .collect();
        self.step(&mut params, &g, iteration)
    }
}
