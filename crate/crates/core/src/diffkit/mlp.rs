//! Dense feed-forward networks over the tape.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use super::params::ParameterSet;
use super::tape::{NodeId, SetId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply_scalar(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn apply_tape(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Fully connected network. Entry names are `layer{i}.w` (shape `[out, in]`,
/// row-major) and `layer{i}.b` (shape `[out]`); biases start at zero.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub params: ParameterSet,
}

impl Mlp {
    pub fn new(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::argument("mlp needs at least input and output dims"));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::argument("mlp layer dims must be positive"));
        }
        let mut params = ParameterSet::new();
        for i in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[i], layer_dims[i + 1]);
            params.add_xavier(
                &alloc::format!("layer{i}.w"),
                &[fan_out, fan_in],
                fan_in,
                fan_out,
                seed,
            )?;
            params.add_zeros(&alloc::format!("layer{i}.b"), &[fan_out])?;
        }
        Ok(Mlp { layer_dims: layer_dims.to_vec(), hidden_activation, output_activation, params })
    }

    /// All-zero parameters; useful for tests and rigged constructions.
    pub fn zeros(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let mut net = Self::new(layer_dims, hidden_activation, output_activation, 0)?;
        for (_, e) in net.params.iter_mut() {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Exact parameter count: sum over layers of (d_i + 1) * d_{i+1}.
    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Forward pass recorded on the tape; differentiable w.r.t. parameters
    /// and the input node.
    pub fn forward(&self, tape: &mut Tape, set: SetId, input: NodeId) -> Result<NodeId> {
        if tape.value(input).len() != self.input_dim() {
            return Err(Error::dimension(alloc::format!(
                "mlp forward: input length {} != {}",
                tape.value(input).len(),
                self.input_dim()
            )));
        }
        let mut h = input;
        for i in 0..self.n_layers() {
            let (rows, cols) = (self.layer_dims[i + 1], self.layer_dims[i]);
            let w = tape.leaf(set, &self.params, &alloc::format!("layer{i}.w"))?;
            let b = tape.leaf(set, &self.params, &alloc::format!("layer{i}.b"))?;
            let wx = tape.linear(w, h, rows, cols)?;
            let pre = tape.add(wx, b)?;
            let act = if i + 1 == self.n_layers() {
                self.output_activation
            } else {
                self.hidden_activation
            };
            h = act.apply_tape(tape, pre);
        }
        Ok(h)
    }

    /// Tape-free forward pass for frozen networks and rollouts.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dimension(alloc::format!(
                "mlp eval: input length {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut h = input.to_vec();
        for i in 0..self.n_layers() {
            let (rows, cols) = (self.layer_dims[i + 1], self.layer_dims[i]);
            let w = &self.params.get(&alloc::format!("layer{i}.w")).unwrap().values;
            let b = &self.params.get(&alloc::format!("layer{i}.b")).unwrap().values;
            let act = if i + 1 == self.n_layers() {
                self.output_activation
            } else {
                self.hidden_activation
            };
            let mut out = Vec::with_capacity(rows);
            for r in 0..rows {
                let pre: f64 =
                    w[r * cols..(r + 1) * cols].iter().zip(&h).map(|(a, x)| a * x).sum::<f64>()
                        + b[r];
                out.push(act.apply_scalar(pre));
            }
            h = out;
        }
        Ok(h)
    }
}
