use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BorrowError;
use crate::dump::{DumpFormat, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Tanh, Activation::Relu, Activation::Sigmoid];

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Affine map `z = W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn xavier(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Layer {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Gradient (or momentum buffer) with the shape of a [`PairEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl EncoderGrad {
    pub fn zeros(enc: &PairEncoder) -> Self {
        EncoderGrad {
            weights: enc.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: enc.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &EncoderGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = vec![];
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).flatten().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    dims: Vec<usize>,
    activation: Activation,
    margin: f64,
}

/// MLP from pair features to the LDP vector space. Hidden layers use
/// `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEncoder {
    activation: Activation,
    margin: f64,
    layers: Vec<Layer>,
}

impl PairEncoder {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        hidden_layers: usize,
        output_dim: usize,
        activation: Activation,
        margin: f64,
        seed: u64,
    ) -> Result<Self, BorrowError> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 || hidden_layers == 0 {
            return Err(BorrowError::InvalidConfig("encoder dimensions must be positive".into()));
        }
        if !(margin >= 0.0) {
            return Err(BorrowError::InvalidConfig(format!("margin must be >= 0, got {margin}")));
        }
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(hidden_dim, hidden_layers));
        dims.push(output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims.windows(2).map(|w| Layer::xavier(w[0], w[1], &mut rng)).collect();
        Ok(PairEncoder {
            activation,
            margin,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_input(&self, x: &[f64]) -> Result<(), BorrowError> {
        if x.len() != self.input_dim() {
            return Err(BorrowError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, BorrowError> {
        self.check_input(x)?;
        Ok(self.trace(x).pop().unwrap_or_default())
    }

    /// Layer outputs, starting with the input itself.
    pub(crate) fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&acts[i]);
            if i != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    /// Adds the gradient of `d_out . f(x)` to `grad`, given the trace of `x`.
    pub(crate) fn backward(&self, acts: &[Vec<f64>], d_out: &[f64], grad: &mut EncoderGrad) {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &acts[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad.weights[i][o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                grad.bias[i][o] += d;
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                for (p, &y) in prev.iter_mut().zip(input) {
                    *p *= self.activation.derivative(y);
                }
                delta = prev;
            }
        }
    }

    /// Gradient of `d_out . f(x)` with respect to every parameter.
    pub fn gradient(&self, x: &[f64], d_out: &[f64]) -> Result<EncoderGrad, BorrowError> {
        self.check_input(x)?;
        if d_out.len() != self.output_dim() {
            return Err(BorrowError::DimensionMismatch {
                expected: self.output_dim(),
                found: d_out.len(),
            });
        }
        let mut g = EncoderGrad::zeros(self);
        self.backward(&self.trace(x), d_out, &mut g);
        Ok(g)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in the order of [`EncoderGrad::flatten`].
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), BorrowError> {
        if p.len() != self.param_count() {
            return Err(BorrowError::DimensionMismatch {
                expected: self.param_count(),
                found: p.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&p[off..off + w]);
            l.bias.copy_from_slice(&p[off + w..off + w + b]);
            off += w + b;
        }
        Ok(())
    }

    /// Momentum SGD: `v = mu v - lr (g + l2 W); W += v`. Biases are not
    /// decayed.
    pub(crate) fn momentum_step(&mut self, grad: &EncoderGrad, velocity: &mut EncoderGrad, lr: f64, mu: f64, l2: f64) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            for ((w, g), v) in l.weights.iter_mut().zip(&grad.weights[i]).zip(&mut velocity.weights[i]) {
                *v = mu * *v - lr * (g + l2 * *w);
                *w += *v;
            }
            for ((b, g), v) in l.bias.iter_mut().zip(&grad.bias[i]).zip(&mut velocity.bias[i]) {
                *v = mu * *v - lr * g;
                *b += *v;
            }
        }
    }

    /// Writes `encoder.json` (layer widths, activation, margin) and one
    /// matrix per layer (`layer<i>.{tsv,bin}`, bias as the last column).
    pub fn save(&self, dir: &Path, format: DumpFormat) -> Result<(), BorrowError> {
        let io = |source| BorrowError::Io {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        let header = CheckpointHeader {
            dims,
            activation: self.activation,
            margin: self.margin,
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| BorrowError::BadCheckpoint(e.to_string()))?;
        fs::write(dir.join("encoder.json"), json + "\n").map_err(io)?;
        for (i, l) in self.layers.iter().enumerate() {
            let mut data = Vec::with_capacity(l.outputs * (l.inputs + 1));
            for (row, b) in l.weights.chunks_exact(l.inputs).zip(&l.bias) {
                data.extend_from_slice(row);
                data.push(*b);
            }
            Matrix::indexed(l.inputs + 1, None, data).write(&dir.join(layer_file(i, format)), format)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, format: DumpFormat) -> Result<Self, BorrowError> {
        let path = dir.join("encoder.json");
        let text = fs::read_to_string(&path).map_err(|source| BorrowError::Io { path, source })?;
        let header: CheckpointHeader =
            serde_json::from_str(&text).map_err(|e| BorrowError::BadCheckpoint(e.to_string()))?;
        if header.dims.len() < 3 {
            return Err(BorrowError::BadCheckpoint("need at least one hidden layer".into()));
        }
        let mut layers = vec![];
        for (i, w) in header.dims.windows(2).enumerate() {
            let m = Matrix::<f64>::read(&dir.join(layer_file(i, format)))?;
            if m.dim != w[0] + 1 || m.rows() != w[1] {
                return Err(BorrowError::BadCheckpoint(format!(
                    "layer {i} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.dim,
                    w[1],
                    w[0] + 1
                )));
            }
            let mut weights = Vec::with_capacity(w[0] * w[1]);
            let mut bias = Vec::with_capacity(w[1]);
            for r in 0..m.rows() {
                let row = m.row(r);
                weights.extend_from_slice(&row[..w[0]]);
                bias.push(row[w[0]]);
            }
            layers.push(Layer {
                inputs: w[0],
                outputs: w[1],
                weights,
                bias,
            });
        }
        Ok(PairEncoder {
            activation: header.activation,
            margin: header.margin,
            layers,
        })
    }
}

fn layer_file(i: usize, format: DumpFormat) -> String {
    match format {
        DumpFormat::Text => format!("layer{i}.tsv"),
        DumpFormat::Binary => format!("layer{i}.bin"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(enc: &PairEncoder, x: &[f64], d_out: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let p = enc.params();
        let f = |q: &[f64]| {
            let mut e = enc.clone();
            e.set_params(q).unwrap();
            e.forward(x).unwrap().iter().zip(d_out).map(|(a, b)| a * b).sum::<f64>()
        };
        (0..p.len())
            .map(|i| {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in Activation::ALL {
            let enc = PairEncoder::new(8, 5, 2, 3, act, 1.0, 4).unwrap();
            let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
            let d_out = [0.3, -1.2, 0.8];
            let a = enc.gradient(&x, &d_out).unwrap().flatten();
            let n = numeric_grad(&enc, &x, &d_out);
            for (u, v) in a.iter().zip(&n) {
                assert!((u - v).abs() < 1e-6, "{act:?}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn output_layer_is_linear() {
        let mut enc = PairEncoder::new(2, 2, 1, 1, Activation::Sigmoid, 1.0, 0).unwrap();
        let n = enc.param_count();
        let mut p = vec![0.0; n];
        // hidden: z = 0, sigmoid -> 0.5; output weights 4, 4, bias -10
        let last = n - 3;
        p[last..].copy_from_slice(&[4.0, 4.0, -10.0]);
        enc.set_params(&p).unwrap();
        assert_eq!(enc.forward(&[1.0, 1.0]).unwrap(), vec![-6.0]);
    }

    #[test]
    fn input_width_checked() {
        let enc = PairEncoder::new(4, 3, 2, 2, Activation::Tanh, 1.0, 0).unwrap();
        assert!(enc.forward(&[0.0; 3]).is_err());
        assert!(PairEncoder::new(4, 3, 2, 2, Activation::Tanh, -1.0, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = PairEncoder::new(6, 4, 3, 2, Activation::Relu, 1.0, 9).unwrap();
        enc.save(dir.path(), DumpFormat::Text).unwrap();
        assert_eq!(PairEncoder::load(dir.path(), DumpFormat::Text).unwrap(), enc);
        enc.save(dir.path(), DumpFormat::Binary).unwrap();
        let back = PairEncoder::load(dir.path(), DumpFormat::Binary).unwrap();
        assert_eq!(back.activation(), Activation::Relu);
        for (a, b) in back.params().iter().zip(enc.params()) {
            assert_eq!(*a, (b as f32) as f64);
        }
    }
}
