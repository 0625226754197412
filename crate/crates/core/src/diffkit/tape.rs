//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Values are dense `f64` vectors; scalars are length-1 vectors. A forward
//! pass records one node per operation; `backward` walks the tape in reverse
//! and accumulates adjoints into the gradient buffers of the parameter sets
//! the leaves were read from. The tape is rebuilt per forward pass.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use super::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Identifies which `ParameterSet` a leaf belongs to when several sets are
/// trained jointly (e.g. policy and encoder in stage 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Leaf { set: usize, name: String },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// Matrix-vector product; `w` holds `rows * cols` values row-major.
    Linear { w: usize, x: usize, rows: usize, cols: usize },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Concat(usize, usize),
    Dot(usize, usize),
    Sum(usize),
    StopGrad,
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_sets: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter set slot; leaves created with the returned id
    /// flush their gradients into the set at the same position in the slice
    /// passed to `backward`.
    pub fn register_set(&mut self) -> SetId {
        self.n_sets += 1;
        SetId(self.n_sets - 1)
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    pub fn constant(&mut self, value: &[f64]) -> NodeId {
        self.push(value.to_vec(), Op::Const)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(vec![value], Op::Const)
    }

    /// Parameter leaf: copies current values of `params[name]`.
    pub fn leaf(&mut self, set: SetId, params: &ParameterSet, name: &str) -> Result<NodeId> {
        let entry = params
            .get(name)
            .ok_or_else(|| Error::argument(alloc::format!("no parameter entry named {name}")))?;
        Ok(self.push(entry.values.clone(), Op::Leaf { set: set.0, name: name.to_string() }))
    }

    fn check_equal_len(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::dimension(alloc::format!("{op}: lengths {la} vs {lb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_equal_len(a, b, "add")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_equal_len(a, b, "sub")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_equal_len(a, b, "mul")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(v, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(v, Op::Scale(a.0, c))
    }

    /// `y = W x`, with `w` a node holding `rows * cols` values row-major.
    pub fn linear(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        if self.nodes[w.0].value.len() != rows * cols {
            return Err(Error::dimension(alloc::format!(
                "linear: weight length {} != {rows}x{cols}",
                self.nodes[w.0].value.len()
            )));
        }
        if self.nodes[x.0].value.len() != cols {
            return Err(Error::dimension(alloc::format!(
                "linear: input length {} != cols {cols}",
                self.nodes[x.0].value.len()
            )));
        }
        let mut v = vec![0.0; rows];
        {
            let wv = &self.nodes[w.0].value;
            let xv = &self.nodes[x.0].value;
            for r in 0..rows {
                let row = &wv[r * cols..(r + 1) * cols];
                v[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        }
        Ok(self.push(v, Op::Linear { w: w.0, x: x.0, rows, cols }))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| libm::tanh(x)).collect();
        self.push(v, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| 1.0 / (1.0 + libm::exp(-x)))
            .collect();
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(v, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| libm::exp(x)).collect();
        self.push(v, Op::Exp(a.0))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a.0].value.clone();
        v.extend_from_slice(&self.nodes[b.0].value);
        self.push(v, Op::Concat(a.0, b.0))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_equal_len(a, b, "dot")?;
        let s: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(vec![s], Op::Dot(a.0, b.0)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a.0))
    }

    /// Identity in the forward pass; blocks gradient flow in backward.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.clone();
        self.push(v, Op::StopGrad)
    }

    /// Mean squared error `(1/n) * sum (pred_i - target_i)^2` as a scalar node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let n = self.nodes[pred.0].value.len();
        if n == 0 {
            return Err(Error::dimension("mse: empty arrays".to_string()));
        }
        self.check_equal_len(pred, target, "mse")?;
        let diff = self.sub(pred, target)?;
        let ss = self.dot(diff, diff)?;
        Ok(self.scale(ss, 1.0 / n as f64))
    }

    /// Mean of a batch of scalar nodes.
    pub fn mean_of(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        if scalars.is_empty() {
            return Err(Error::argument("mean_of: empty batch".to_string()));
        }
        let mut acc = scalars[0];
        for &s in &scalars[1..] {
            acc = self.add(acc, s)?;
        }
        Ok(self.scale(acc, 1.0 / scalars.len() as f64))
    }

    /// Backpropagate from a scalar loss node, accumulating into the gradient
    /// buffers of `sets`. Set indices recorded by `leaf` index into `sets`.
    pub fn backward(&self, loss: NodeId, sets: &mut [&mut ParameterSet]) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::state("backward called without a forward tape".to_string()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::dimension(alloc::format!(
                "backward: loss must be scalar, got length {}",
                self.nodes[loss.0].value.len()
            )));
        }
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            if adj[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let dy = core::mem::take(&mut adj[i]);
            match &self.nodes[i].op {
                Op::Const => {}
                Op::StopGrad => {}
                Op::Leaf { set, name } => {
                    let set_ref = sets.get_mut(*set).ok_or_else(|| {
                        Error::argument(alloc::format!(
                            "backward: leaf references set {set} but only {} sets given",
                            0
                        ))
                    })?;
                    let entry = set_ref.get_mut(name).ok_or_else(|| {
                        Error::argument(alloc::format!("backward: set has no entry {name}"))
                    })?;
                    if entry.grads.len() != dy.len() {
                        return Err(Error::dimension(alloc::format!(
                            "backward: leaf {name} length {} vs adjoint {}",
                            entry.grads.len(),
                            dy.len()
                        )));
                    }
                    for (g, d) in entry.grads.iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::Add(a, b) => {
                    for (g, d) in adj[*a].iter_mut().zip(&dy) {
                        *g += d;
                    }
                    for (g, d) in adj[*b].iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::Sub(a, b) => {
                    for (g, d) in adj[*a].iter_mut().zip(&dy) {
                        *g += d;
                    }
                    for (g, d) in adj[*b].iter_mut().zip(&dy) {
                        *g -= d;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for k in 0..dy.len() {
                        adj[a][k] += dy[k] * self.nodes[b].value[k];
                    }
                    for k in 0..dy.len() {
                        adj[b][k] += dy[k] * self.nodes[a].value[k];
                    }
                }
                Op::Scale(a, c) => {
                    for (g, d) in adj[*a].iter_mut().zip(&dy) {
                        *g += c * d;
                    }
                }
                Op::Linear { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    for r in 0..rows {
                        let d = dy[r];
                        if d == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            adj[w][r * cols + c] += d * self.nodes[x].value[c];
                        }
                    }
                    for c in 0..cols {
                        let mut acc = 0.0;
                        for r in 0..rows {
                            acc += self.nodes[w].value[r * cols + c] * dy[r];
                        }
                        adj[x][c] += acc;
                    }
                }
                Op::Tanh(a) => {
                    for k in 0..dy.len() {
                        let y = self.nodes[i].value[k];
                        adj[*a][k] += dy[k] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    for k in 0..dy.len() {
                        let y = self.nodes[i].value[k];
                        adj[*a][k] += dy[k] * y * (1.0 - y);
                    }
                }
                Op::Relu(a) => {
                    for k in 0..dy.len() {
                        if self.nodes[*a].value[k] > 0.0 {
                            adj[*a][k] += dy[k];
                        }
                    }
                }
                Op::Exp(a) => {
                    for k in 0..dy.len() {
                        adj[*a][k] += dy[k] * self.nodes[i].value[k];
                    }
                }
                Op::Concat(a, b) => {
                    let la = self.nodes[*a].value.len();
                    for k in 0..la {
                        adj[*a][k] += dy[k];
                    }
                    for k in 0..self.nodes[*b].value.len() {
                        adj[*b][k] += dy[la + k];
                    }
                }
                Op::Dot(a, b) => {
                    let d = dy[0];
                    let (a, b) = (*a, *b);
                    for k in 0..self.nodes[a].value.len() {
                        adj[a][k] += d * self.nodes[b].value[k];
                    }
                    for k in 0..self.nodes[b].value.len() {
                        adj[b][k] += d * self.nodes[a].value[k];
                    }
                }
                Op::Sum(a) => {
                    let d = dy[0];
                    for g in adj[*a].iter_mut() {
                        *g += d;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_analytic() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let set = tape.register_set();
        let p = tape.leaf(set, &ps, "p").unwrap();
        let loss = tape.dot(p, p).unwrap();
        tape.backward(loss, &mut [&mut ps]).unwrap();
        assert_eq!(ps.get("p").unwrap().grads, vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[2], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let set = tape.register_set();
        let p = tape.leaf(set, &ps, "p").unwrap();
        let loss = tape.dot(p, p).unwrap();
        tape.backward(loss, &mut [&mut ps]).unwrap();
        tape.backward(loss, &mut [&mut ps]).unwrap();
        assert_eq!(ps.get("p").unwrap().grads, vec![4.0, 8.0]);
    }

    #[test]
    fn backward_rejects_vector_loss() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[2], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let set = tape.register_set();
        let p = tape.leaf(set, &ps, "p").unwrap();
        assert!(tape.backward(p, &mut [&mut ps]).is_err());
    }

    #[test]
    fn backward_on_empty_tape_is_state_error() {
        let tape = Tape::new();
        let mut ps = ParameterSet::new();
        assert!(matches!(tape.backward(NodeId(0), &mut [&mut ps]), Err(Error::State(_))));
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[2], vec![3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let set = tape.register_set();
        let p = tape.leaf(set, &ps, "p").unwrap();
        let frozen = tape.stop_grad(p);
        let loss = tape.dot(p, frozen).unwrap();
        tape.backward(loss, &mut [&mut ps]).unwrap();
        // Only the live branch contributes: d/dp (p . const) = const = values.
        assert_eq!(ps.get("p").unwrap().grads, vec![3.0, 4.0]);
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = tape.constant(&[0.5, 2.5, 2.0, 4.0, 7.0]);
        let m = tape.mse(a, b).unwrap();
        let expected: f64 = [0.5f64, -0.5, 1.0, 0.0, -2.0]
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            / 5.0;
        assert!((tape.scalar_value(m) - expected).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_length_mismatch_and_empty() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0]);
        let b = tape.constant(&[1.0]);
        assert!(tape.mse(a, b).is_err());
        let e = tape.constant(&[]);
        assert!(tape.mse(e, e).is_err());
    }
}
