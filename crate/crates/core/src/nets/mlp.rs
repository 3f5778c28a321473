use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::serde_util::{dmat, dvec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    #[serde(with = "dmat")]
    pub weights: DMatrix<f64>,
    #[serde(with = "dvec")]
    pub bias: DVector<f64>,
}

/// Feed-forward net with tanh hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub head: Head,
    /// Dropout rate after every hidden layer, train mode only.
    pub dropout: f64,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    /// Input of each layer (after activation and dropout).
    inputs: Vec<DVector<f64>>,
    /// tanh output of each hidden layer, before dropout.
    hidden: Vec<DVector<f64>>,
    /// Inverted-dropout scale per hidden unit (0 or 1/(1−p)).
    masks: Vec<DVector<f64>>,
    output: DVector<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &DVector<f64> {
        &self.output
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    fn check_sizes(sizes: &[usize], dropout: f64) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(GameError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(GameError::Shape(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(())
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, dropout: f64, rng: &mut R) -> Result<Self> {
        Self::check_sizes(sizes, dropout)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(Mlp { sizes: sizes.to_vec(), layers, head, dropout })
    }

    pub fn zeros(sizes: &[usize], head: Head, dropout: f64) -> Result<Self> {
        Self::check_sizes(sizes, dropout)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer { weights: DMatrix::zeros(w[1], w[0]), bias: DVector::zeros(w[1]) })
            .collect();
        Ok(Mlp { sizes: sizes.to_vec(), layers, head, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn validate(&self) -> Result<()> {
        Self::check_sizes(&self.sizes, self.dropout)?;
        if self.layers.len() != self.sizes.len() - 1 {
            return Err(GameError::Shape("layer count does not match sizes".into()));
        }
        for (l, w) in self.layers.iter().zip(self.sizes.windows(2)) {
            if l.weights.shape() != (w[1], w[0]) || l.bias.len() != w[1] {
                return Err(GameError::Shape(format!("layer shape does not match {w:?}")));
            }
        }
        Ok(())
    }

    fn apply_head(&self, z: DVector<f64>) -> DVector<f64> {
        match self.head {
            Head::Linear => z,
            Head::Sigmoid => z.map(sigmoid),
            Head::Softmax => {
                let m = z.max();
                let e = z.map(|v| (v - m).exp());
                let s = e.sum();
                e / s
            }
        }
    }

    /// Eval-mode forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.forward_cached::<rand::rngs::ThreadRng>(x, None)?.output)
    }

    /// Forward pass keeping activations; dropout is active iff `rng` is given.
    pub fn forward_cached<R: Rng + ?Sized>(&self, x: &[f64], mut rng: Option<&mut R>) -> Result<MlpCache> {
        if x.len() != self.input_dim() {
            return Err(GameError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::new();
        let mut masks = Vec::new();
        let mut h = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = &layer.weights * &h + &layer.bias;
            inputs.push(h);
            if k == last {
                let output = self.apply_head(z);
                return Ok(MlpCache { inputs, hidden, masks, output });
            }
            let a = z.map(f64::tanh);
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - self.dropout);
                    DVector::from_fn(a.len(), |_, _| if r.random::<f64>() < self.dropout { 0.0 } else { keep })
                }
                _ => DVector::from_element(a.len(), 1.0),
            };
            h = a.component_mul(&mask);
            hidden.push(a);
            masks.push(mask);
        }
        unreachable!("at least one layer")
    }

    /// Reverse pass for `∂L/∂output = grad_out`; returns the flat weight
    /// gradient (ordering of [`Mlp::params`]) and `∂L/∂input`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &DVector<f64>) -> Result<(Vec<f64>, DVector<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(GameError::MissingCache);
        }
        if grad_out.len() != self.output_dim() {
            return Err(GameError::Dimension { expected: self.output_dim(), got: grad_out.len() });
        }
        let y = &cache.output;
        let mut g = match self.head {
            Head::Linear => grad_out.clone(),
            Head::Sigmoid => grad_out.component_mul(&y.map(|p| p * (1.0 - p))),
            Head::Softmax => {
                let dot = grad_out.dot(y);
                y.component_mul(&grad_out.add_scalar(-dot))
            }
        };
        let mut per_layer: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            per_layer.push((&g * cache.inputs[k].transpose(), g.clone()));
            let gin = layer.weights.transpose() * &g;
            if k == 0 {
                g = gin;
            } else {
                let a = &cache.hidden[k - 1];
                let mask = &cache.masks[k - 1];
                g = gin.component_mul(mask).component_mul(&a.map(|v| 1.0 - v * v));
            }
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in per_layer {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        Ok((flat, g))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weights (column-major) then bias, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend(l.weights.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(GameError::Dimension { expected: self.num_params(), got: p.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = p[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = p[k];
                k += 1;
            }
        }
        Ok(())
    }
}
