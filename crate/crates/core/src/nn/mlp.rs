use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClbfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative with the subgradient at 0 taken as 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense layer `z = W x + b` with `W` stored row-major (`rows × cols`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ClbfError::invalid("layer dimensions must be positive"));
        }
        ClbfError::check_dim(rows * cols, weights.len())?;
        ClbfError::check_dim(rows, bias.len())?;
        Ok(Layer {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    #[inline]
    pub fn w(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = W x + b`.
    #[inline]
    pub fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.cols)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Feedforward network: ReLU after every layer but the last, final layer affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    activations: Vec<Activation>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(ClbfError::invalid("network needs at least one layer"));
        }
        ClbfError::check_dim(layers.len() - 1, activations.len())?;
        for pair in layers.windows(2) {
            if pair[0].rows != pair[1].cols {
                return Err(ClbfError::invalid(format!(
                    "layer output dim {} does not feed next layer input dim {}",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        Ok(Mlp {
            layers,
            activations,
        })
    }

    /// Network with the given widths (`[in, h1, …, out]`), uniform Glorot
    /// initialisation, zero biases.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(ClbfError::invalid("need at least input and output widths"));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let weights = (0..n_in * n_out)
                    .map(|_| rng.gen_range(-limit..=limit))
                    .collect();
                Layer::new(n_out, n_in, weights, vec![0.0; n_out])
            })
            .collect::<Result<Vec<_>>>()?;
        let activations = vec![Activation::Relu; layers.len() - 1];
        Mlp::new(layers, activations)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    /// `[in, h1, …, out]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ClbfError::check_dim(self.input_dim(), x.len())?;
        Ok(self.eval(x))
    }

    /// Forward pass without the dimension check.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&cur, &mut next);
            if let Some(act) = self.activations.get(k) {
                next.iter_mut().for_each(|z| *z = act.apply(*z));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Scalar output of a single-output network.
    #[inline]
    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        self.eval(x)[0]
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Flattened parameters in layer order, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        ClbfError::check_dim(self.num_params(), flat.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}
