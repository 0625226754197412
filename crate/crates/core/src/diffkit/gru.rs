//! A single GRU cell with the standard gated recurrence.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use super::params::ParameterSet;
use super::tape::{NodeId, SetId, Tape};

/// Gated recurrent unit:
///
/// ```text
/// u  = sigmoid(W_u x + U_u h + b_u)      (update gate)
/// r  = sigmoid(W_r x + U_r h + b_r)      (reset gate)
/// c  = tanh(W_c x + U_c (r ⊙ h) + b_c)   (candidate)
/// h' = (1 - u) ⊙ h + u ⊙ c
/// ```
///
/// Entry names: `{update,reset,cand}.{w,u,b}` with shapes `[h, x]`, `[h, h]`,
/// `[h]`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub params: ParameterSet,
}

const GATES: [&str; 3] = ["update", "reset", "cand"];

impl GruCell {
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::argument("gru dims must be positive"));
        }
        let mut params = ParameterSet::new();
        for gate in GATES {
            params.add_xavier(
                &alloc::format!("{gate}.w"),
                &[hidden_dim, input_dim],
                input_dim,
                hidden_dim,
                seed,
            )?;
            params.add_xavier(
                &alloc::format!("{gate}.u"),
                &[hidden_dim, hidden_dim],
                hidden_dim,
                hidden_dim,
                seed,
            )?;
            params.add_zeros(&alloc::format!("{gate}.b"), &[hidden_dim])?;
        }
        Ok(GruCell { input_dim, hidden_dim, params })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        let mut cell = Self::new(input_dim, hidden_dim, 0)?;
        for (_, e) in cell.params.iter_mut() {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(cell)
    }

    /// 3 * (h*x + h*h + h) trainable scalars.
    pub fn param_count(&self) -> usize {
        3 * (self.hidden_dim * self.input_dim
            + self.hidden_dim * self.hidden_dim
            + self.hidden_dim)
    }

    fn check_dims(&self, h_len: usize, x_len: usize) -> Result<()> {
        if h_len != self.hidden_dim {
            return Err(Error::dimension(alloc::format!(
                "gru step: hidden length {h_len} != {}",
                self.hidden_dim
            )));
        }
        if x_len != self.input_dim {
            return Err(Error::dimension(alloc::format!(
                "gru step: input length {x_len} != {}",
                self.input_dim
            )));
        }
        Ok(())
    }

    fn gate_pre(
        &self,
        tape: &mut Tape,
        set: SetId,
        gate: &str,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let (hd, xd) = (self.hidden_dim, self.input_dim);
        let w = tape.leaf(set, &self.params, &alloc::format!("{gate}.w"))?;
        let u = tape.leaf(set, &self.params, &alloc::format!("{gate}.u"))?;
        let b = tape.leaf(set, &self.params, &alloc::format!("{gate}.b"))?;
        let wx = tape.linear(w, x, hd, xd)?;
        let uh = tape.linear(u, h, hd, hd)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    }

    /// One recurrence step on the tape; differentiable through parameters,
    /// the hidden state, and the input.
    pub fn step(&self, tape: &mut Tape, set: SetId, hidden: NodeId, input: NodeId) -> Result<NodeId> {
        self.check_dims(tape.value(hidden).len(), tape.value(input).len())?;
        let u_pre = self.gate_pre(tape, set, "update", input, hidden)?;
        let u = tape.sigmoid(u_pre);
        let r_pre = self.gate_pre(tape, set, "reset", input, hidden)?;
        let r = tape.sigmoid(r_pre);

        let rh = tape.mul(r, hidden)?;
        let (hd, xd) = (self.hidden_dim, self.input_dim);
        let wc = tape.leaf(set, &self.params, "cand.w")?;
        let uc = tape.leaf(set, &self.params, "cand.u")?;
        let bc = tape.leaf(set, &self.params, "cand.b")?;
        let wcx = tape.linear(wc, input, hd, xd)?;
        let ucrh = tape.linear(uc, rh, hd, hd)?;
        let pre = tape.add(wcx, ucrh)?;
        let pre = tape.add(pre, bc)?;
        let c = tape.tanh(pre);

        let ones = tape.constant(&vec![1.0; hd]);
        let one_minus_u = tape.sub(ones, u)?;
        let keep = tape.mul(one_minus_u, hidden)?;
        let take = tape.mul(u, c)?;
        tape.add(keep, take)
    }

    /// Tape-free step for frozen cells and rollouts.
    pub fn eval_step(&self, hidden: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(hidden.len(), input.len())?;
        let (hd, xd) = (self.hidden_dim, self.input_dim);
        let pre = |gate: &str, hvec: &[f64]| -> Vec<f64> {
            let w = &self.params.get(&alloc::format!("{gate}.w")).unwrap().values;
            let u = &self.params.get(&alloc::format!("{gate}.u")).unwrap().values;
            let b = &self.params.get(&alloc::format!("{gate}.b")).unwrap().values;
            (0..hd)
                .map(|row| {
                    let wx: f64 =
                        w[row * xd..(row + 1) * xd].iter().zip(input).map(|(a, v)| a * v).sum();
                    let uh: f64 =
                        u[row * hd..(row + 1) * hd].iter().zip(hvec).map(|(a, v)| a * v).sum();
                    wx + uh + b[row]
                })
                .collect()
        };
        let sigmoid = |x: f64| 1.0 / (1.0 + libm::exp(-x));
        let u: Vec<f64> = pre("update", hidden).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = pre("reset", hidden).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(hidden).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = pre("cand", &rh).into_iter().map(libm::tanh).collect();
        Ok((0..hd).map(|k| (1.0 - u[k]) * hidden[k] + u[k] * c[k]).collect())
    }
}
