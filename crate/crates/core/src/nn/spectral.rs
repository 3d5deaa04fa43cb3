//! Power-iteration spectral norms and the layer-product Lipschitz bound.

use crate::error::{ClbfError, Result};
use crate::nn::mlp::{Layer, Mlp};
use crate::nn::tape::MlpGrad;

/// Iterations used when a bound is reported or checked.
pub const VERIFY_POWER_ITERS: usize = 50;
/// Iterations per optimizer step with warm-started vectors.
pub const TRAIN_POWER_ITERS: usize = 5;

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        out[r] = w[r * cols..(r + 1) * cols]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
    }
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for r in 0..rows {
        let ur = u[r];
        if ur == 0.0 {
            continue;
        }
        out.iter_mut()
            .zip(&w[r * cols..(r + 1) * cols])
            .for_each(|(o, a)| *o += ur * a);
    }
}

/// Deterministic, non-degenerate starting vector.
fn start_vector(cols: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..cols)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 1.618_033_988_75).sin())
        .collect();
    normalize(&mut v);
    v
}

/// Singular-vector pair produced by power iteration; `sigma = uᵀ W v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIterate {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Runs `iters` steps of `v ← WᵀW v / ‖WᵀW v‖` from `v0`.
pub fn power_iterate(
    w: &[f64],
    rows: usize,
    cols: usize,
    v0: Option<&[f64]>,
    iters: usize,
) -> Result<PowerIterate> {
    if rows == 0 || cols == 0 || w.is_empty() {
        return Err(ClbfError::invalid("spectral norm of an empty matrix"));
    }
    ClbfError::check_dim(rows * cols, w.len())?;
    if iters == 0 {
        return Err(ClbfError::invalid(
            "power iteration needs at least one step",
        ));
    }
    let mut v = match v0 {
        Some(v0) if v0.len() == cols && v0.iter().any(|x| *x != 0.0) => {
            let mut v = v0.to_vec();
            normalize(&mut v);
            v
        }
        _ => start_vector(cols),
    };
    let mut u = vec![0.0; rows];
    for _ in 0..iters {
        mat_vec(w, rows, cols, &v, &mut u);
        if normalize(&mut u) == 0.0 {
            // v in the null space: W may be zero, or the start was unlucky.
            if w.iter().all(|x| *x == 0.0) {
                return Ok(PowerIterate { sigma: 0.0, u, v });
            }
            v = start_vector(cols);
            v.rotate_left(1);
            continue;
        }
        mat_t_vec(w, rows, cols, &u, &mut v);
        normalize(&mut v);
    }
    mat_vec(w, rows, cols, &v, &mut u);
    let sigma = normalize(&mut u);
    Ok(PowerIterate { sigma, u, v })
}

/// Power-iteration estimate of ‖W‖₂ (never above the true largest singular value).
pub fn spectral_norm(layer: &Layer, iters: usize) -> Result<f64> {
    Ok(power_iterate(&layer.weights, layer.rows, layer.cols, None, iters)?.sigma)
}

/// `∏_k ‖W_k‖₂`, a global l₂ Lipschitz bound for 1-Lipschitz activations.
pub fn lipschitz_upper_bound_l2(net: &Mlp) -> Result<f64> {
    net.layers()
        .iter()
        .map(|l| spectral_norm(l, VERIFY_POWER_ITERS))
        .product()
}

/// Warm-started per-layer power iteration for use inside a training loop.
///
/// The product's gradient treats the singular vectors as constants, so
/// `∂σ_k/∂W_k = u_k v_kᵀ`.
#[derive(Debug, Clone, Default)]
pub struct SpectralTracker {
    vs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SpectralProduct {
    pub product: f64,
    pub layers: Vec<PowerIterate>,
}

impl SpectralTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn estimate(&mut self, net: &Mlp, iters: usize) -> Result<SpectralProduct> {
        if self.vs.len() != net.layers().len() {
            self.vs = vec![Vec::new(); net.layers().len()];
        }
        let mut layers = Vec::with_capacity(net.layers().len());
        for (l, v) in net.layers().iter().zip(self.vs.iter_mut()) {
            let warm = if v.len() == l.cols {
                Some(v.as_slice())
            } else {
                None
            };
            let it = power_iterate(&l.weights, l.rows, l.cols, warm, iters)?;
            *v = it.v.clone();
            layers.push(it);
        }
        let product = layers.iter().map(|p| p.sigma).product();
        Ok(SpectralProduct { product, layers })
    }
}

impl SpectralProduct {
    /// Accumulates `scale · ∂(∏σ_k)/∂W` into `grads`.
    pub fn accumulate_grad(&self, scale: f64, grads: &mut MlpGrad) {
        for (k, it) in self.layers.iter().enumerate() {
            let others: f64 = self
                .layers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, p)| p.sigma)
                .product();
            let coeff = scale * others;
            let cols = it.v.len();
            let gw = &mut grads.weights[k];
            for (r, ur) in it.u.iter().enumerate() {
                let cu = coeff * ur;
                gw[r * cols..(r + 1) * cols]
                    .iter_mut()
                    .zip(&it.v)
                    .for_each(|(g, vc)| *g += cu * vc);
            }
        }
    }
}
