//! A small dense ReLU regressor with folded input/output scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dense layer, `out = W·in + b`, with `W` row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn w(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate().take(self.outputs) {
            let row = &self.weights[j * self.inputs..(j + 1) * self.inputs];
            *yj = self.biases[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Affine standardisation of the two inputs and the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input_mean: [f64; 2],
    pub input_std: [f64; 2],
    pub output_mean: f64,
    pub output_std: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self {
            input_mean: [0.0; 2],
            input_std: [1.0; 2],
            output_mean: 0.0,
            output_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub mae: f64,
    pub max_ae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub train: SplitMetrics,
    pub validation: SplitMetrics,
    pub test: SplitMetrics,
    pub epochs: usize,
    pub best_epoch: usize,
}

/// ReLU on every layer, including the output. Weights act on standardised
/// values; [`FeedForwardNet::folded_layers`] gives the equivalent net on raw
/// minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub scaling: Scaling,
    pub alpha: Option<f64>,
    pub config: Option<super::TrainConfig>,
    pub metrics: Option<TrainMetrics>,
}

impl FeedForwardNet {
    /// An all-zero network of the given shape (inputs first, 1 output last).
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes[0] != 2 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::domain(format!(
                "layer sizes must start with 2 and end with 1, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::domain("empty layer".to_string()));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers: layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            scaling: Scaling::default(),
            alpha: None,
            config: None,
            metrics: None,
        })
    }

    /// `2 → hidden × width → 1`.
    pub fn shape(hidden: usize, width: usize) -> Vec<usize> {
        let mut s = vec![2];
        s.extend(std::iter::repeat_n(width, hidden));
        s.push(1);
        s
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let sizes_ok = self.layer_sizes.len() == self.layers.len() + 1
            && self.layers.iter().enumerate().all(|(i, l)| {
                l.inputs == self.layer_sizes[i]
                    && l.outputs == self.layer_sizes[i + 1]
                    && l.weights.len() == l.inputs * l.outputs
                    && l.biases.len() == l.outputs
            });
        if !sizes_ok || self.layer_sizes[0] != 2 || self.layer_sizes.last() != Some(&1) {
            return Err(Error::domain("network dimensions are inconsistent".to_string()));
        }
        let finite = self
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()));
        let s = &self.scaling;
        if !finite || s.input_std.iter().any(|&x| !(x > 0.0)) || !(s.output_std > 0.0) {
            return Err(Error::domain("network has non-finite weights or scaling".to_string()));
        }
        Ok(())
    }

    /// Layers acting directly on `(E, Var)` in minutes and returning minutes.
    pub fn folded_layers(&self) -> Vec<Layer> {
        let mut layers = self.layers.clone();
        let s = self.scaling;
        let first = &mut layers[0];
        for j in 0..first.outputs {
            for k in 0..2 {
                let w = first.weights[j * 2 + k] / s.input_std[k];
                first.weights[j * 2 + k] = w;
                first.biases[j] -= w * s.input_mean[k];
            }
        }
        let last = layers.last_mut().unwrap();
        for w in &mut last.weights {
            *w *= s.output_std;
        }
        last.biases[0] = last.biases[0] * s.output_std + s.output_mean;
        layers
    }

    /// Predicted percentile in minutes; never negative.
    pub fn forward(&self, e: f64, v: f64) -> f64 {
        forward_layers(&self.folded_layers(), e, v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }
}

/// Evaluate ReLU layers on raw inputs.
pub fn forward_layers(layers: &[Layer], e: f64, v: f64) -> f64 {
    let mut cur = vec![e, v];
    let mut next = Vec::new();
    for l in layers {
        next.resize(l.outputs, 0.0);
        l.apply(&cur, &mut next);
        for x in &mut next {
            *x = x.max(0.0);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = FeedForwardNet::zeros(&FeedForwardNet::shape(2, 8)).unwrap();
        assert_eq!(net.forward(0.0, 0.0), 0.0);
        assert_eq!(net.forward(300.0, 900.0), 0.0);
        assert!(FeedForwardNet::zeros(&[3, 1]).is_err());
        assert!(FeedForwardNet::zeros(&[2, 0, 1]).is_err());
    }

    #[test]
    fn folding_preserves_output() {
        let mut net = FeedForwardNet::zeros(&[2, 3, 1]).unwrap();
        net.layers[0].weights = vec![0.5, -0.2, 0.1, 0.3, -0.4, 0.8];
        net.layers[0].biases = vec![0.1, -0.1, 0.05];
        net.layers[1].weights = vec![1.0, -0.5, 0.7];
        net.layers[1].biases = vec![0.2];
        net.scaling = Scaling {
            input_mean: [300.0, 5000.0],
            input_std: [120.0, 3000.0],
            output_mean: 330.0,
            output_std: 140.0,
        };
        for &(e, v) in &[(0.0, 0.0), (250.0, 4000.0), (700.0, 20000.0)] {
            // By hand in scaled space with the shifted output ReLU.
            let x = [(e - 300.0) / 120.0, (v - 5000.0) / 3000.0];
            let mut h = [0.0; 3];
            net.layers[0].apply(&x, &mut h);
            let h: Vec<f64> = h.iter().map(|x| x.max(0.0)).collect();
            let mut u = [0.0];
            net.layers[1].apply(&h, &mut u);
            let expect = (u[0] * 140.0 + 330.0).max(0.0);
            assert!((net.forward(e, v) - expect).abs() < 1e-9);
        }
        let back = FeedForwardNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
