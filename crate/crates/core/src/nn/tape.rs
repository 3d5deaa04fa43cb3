use crate::error::{ClbfError, Result};
use crate::nn::mlp::{Layer, Mlp};

/// Parameter gradient with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrad {
            weights: net
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            bias: net
                .layers()
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.bias.iter_mut().flatten().for_each(|g| *g = 0.0);
    }

    pub fn add_scaled(&mut self, other: &MlpGrad, k: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
    }

    /// Flattened in the order of [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Records the primal values of one forward pass so that reverse-mode
/// gradients of a linear functional of the output can be taken afterwards.
#[derive(Debug, Default, Clone)]
pub struct GradientTape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    preacts: Vec<Vec<f64>>,
    recorded: bool,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded
    }

    pub fn forward(&mut self, net: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
        ClbfError::check_dim(net.input_dim(), x.len())?;
        let n = net.layers().len();
        self.inputs.resize_with(n, Vec::new);
        self.preacts.resize_with(n, Vec::new);
        self.inputs[0].clear();
        self.inputs[0].extend_from_slice(x);
        for k in 0..n {
            let layer = &net.layers()[k];
            let (inp, pre) = (&self.inputs[k], &mut self.preacts[k]);
            layer.affine_into(inp, pre);
            if k + 1 < n {
                let act = net.activations()[k];
                let next: Vec<f64> = self.preacts[k].iter().map(|z| act.apply(*z)).collect();
                self.inputs[k + 1] = next;
            }
        }
        self.recorded = true;
        Ok(self.preacts[n - 1].clone())
    }

    /// Accumulates `upstreamᵀ ∂y/∂θ` into `grads` and returns `upstreamᵀ ∂y/∂x`.
    pub fn backward(&self, net: &Mlp, upstream: &[f64], grads: &mut MlpGrad) -> Result<Vec<f64>> {
        self.backward_impl(net, upstream, Some(grads))
    }

    /// Input gradient only.
    pub fn backward_input(&self, net: &Mlp, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backward_impl(net, upstream, None)
    }

    /// Gradients of a scalar output scaled by `upstream`.
    pub fn backward_scalar(&self, net: &Mlp, upstream: f64) -> Result<(MlpGrad, Vec<f64>)> {
        let mut g = MlpGrad::zeros_like(net);
        let gx = self.backward(net, &[upstream], &mut g)?;
        Ok((g, gx))
    }

    fn backward_impl(
        &self,
        net: &Mlp,
        upstream: &[f64],
        mut grads: Option<&mut MlpGrad>,
    ) -> Result<Vec<f64>> {
        if !self.recorded || self.preacts.len() != net.layers().len() {
            return Err(ClbfError::NoForwardPass);
        }
        ClbfError::check_dim(net.output_dim(), upstream.len())?;
        let n = net.layers().len();
        let mut delta = upstream.to_vec();
        for k in (0..n).rev() {
            let layer: &Layer = &net.layers()[k];
            if k + 1 < n {
                let act = net.activations()[k];
                delta
                    .iter_mut()
                    .zip(&self.preacts[k])
                    .for_each(|(d, z)| *d *= act.derivative(*z));
            }
            if let Some(g) = grads.as_deref_mut() {
                let inp = &self.inputs[k];
                let gw = &mut g.weights[k];
                for (r, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                    row.iter_mut().zip(inp).for_each(|(gwv, xv)| *gwv += d * xv);
                }
                g.bias[k]
                    .iter_mut()
                    .zip(&delta)
                    .for_each(|(gb, d)| *gb += d);
            }
            let mut prev = vec![0.0; layer.cols];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                prev.iter_mut()
                    .zip(layer.row(r))
                    .for_each(|(p, w)| *p += d * w);
            }
            delta = prev;
        }
        Ok(delta)
    }
}

/// Value and input gradient of a scalar-output network.
pub fn value_and_input_grad(net: &Mlp, x: &[f64]) -> (f64, Vec<f64>) {
    let mut tape = GradientTape::new();
    let y = tape
        .forward(net, x)
        .expect("input dimension checked by caller")[0];
    let g = tape.backward_input(net, &[1.0]).expect("tape recorded");
    (y, g)
}
