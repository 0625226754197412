//! GRU context encoder. A window of transitions is mapped to a fixed-size
//! context vector z: the final hidden state after stepping the GRU over the
//! per-transition input sequence.
//!
//! The default input per step is (psi(s_t), omega'_t) from a trained SF
//! network; the raw-transition variant feeds (s_t, a_t, r_t, s_{t+1})
//! directly and exists for ablation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::diffkit::checkpoint::{self, EntryMap};
use crate::diffkit::{GruCell, NodeId, SetId, Tape};
use crate::error::{Error, Result};
use crate::envs::Transition;
use crate::rng;
use crate::sfnet::SfNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextSource {
    SfFeatures,
    RawTransitions,
}

impl ContextSource {
    pub fn name(self) -> &'static str {
        match self {
            ContextSource::SfFeatures => "sf",
            ContextSource::RawTransitions => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sf" => Ok(ContextSource::SfFeatures),
            "raw" => Ok(ContextSource::RawTransitions),
            other => Err(Error::argument(alloc::format!(
                "unknown context source '{other}' (expected sf or raw)"
            ))),
        }
    }

    pub fn input_dim(self, state_dim: usize, action_dim: usize, feature_dim: usize) -> usize {
        match self {
            ContextSource::SfFeatures => 2 * feature_dim,
            ContextSource::RawTransitions => state_dim + action_dim + 1 + state_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub gru: GruCell,
    pub source: ContextSource,
    pub z_dim: usize,
}

impl ContextEncoder {
    pub fn new(source: ContextSource, input_dim: usize, z_dim: usize, seed: u64) -> Result<Self> {
        Ok(ContextEncoder {
            gru: GruCell::new(input_dim, z_dim, rng::derive(seed, "ctx.gru"))?,
            source,
            z_dim,
        })
    }

    /// Per-transition GRU input vectors for a window, in trajectory order.
    ///
    /// `net` must be Some for the SF-features source and is ignored for raw
    /// transitions.
    pub fn inputs(
        &self,
        net: Option<&SfNetwork>,
        window: &[&Transition],
    ) -> Result<Vec<Vec<f64>>> {
        if window.is_empty() {
            return Err(Error::argument("context window must be nonempty"));
        }
        let mut out = Vec::with_capacity(window.len());
        match self.source {
            ContextSource::SfFeatures => {
                let net = net.ok_or_else(|| {
                    Error::argument("sf context source requires a trained SF network")
                })?;
                for t in window {
                    let o = net.forward(t)?;
                    let mut x = o.psi;
                    x.extend_from_slice(&o.omega);
                    out.push(x);
                }
            }
            ContextSource::RawTransitions => {
                for t in window {
                    let mut x = t.state.clone();
                    x.extend_from_slice(&t.action);
                    x.push(t.reward);
                    x.extend_from_slice(&t.next_state);
                    out.push(x);
                }
            }
        }
        for x in &out {
            if x.len() != self.gru.input_dim {
                return Err(Error::dimension(alloc::format!(
                    "context input dim {} does not match encoder {}",
                    x.len(),
                    self.gru.input_dim
                )));
            }
        }
        Ok(out)
    }

    /// Frozen-parameter encoding of a window.
    pub fn encode(&self, net: Option<&SfNetwork>, window: &[&Transition]) -> Result<Vec<f64>> {
        let inputs = self.inputs(net, window)?;
        let mut h = alloc::vec![0.0; self.z_dim];
        for x in &inputs {
            h = self.gru.eval_step(&h, x)?;
        }
        Ok(h)
    }

    /// Encoding on the tape; gradients flow into the GRU parameters. Inputs
    /// enter as constants, so upstream networks stay frozen.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        set: SetId,
        net: Option<&SfNetwork>,
        window: &[&Transition],
    ) -> Result<NodeId> {
        let inputs = self.inputs(net, window)?;
        let zeros = alloc::vec![0.0; self.z_dim];
        let mut h = tape.constant(&zeros);
        for x in &inputs {
            let xn = tape.constant(x);
            h = self.gru.step(tape, set, h, xn)?;
        }
        Ok(h)
    }

    pub fn checksum(&self) -> u64 {
        self.gru.params.checksum()
    }

    pub fn encode_checkpoint(&self, extra: &[(String, Vec<usize>, Vec<f64>)]) -> String {
        checkpoint::encode(&[("encoder", &self.gru.params)], extra)
    }

    pub fn restore_checkpoint(&mut self, map: &EntryMap) -> Result<()> {
        checkpoint::apply(map, "encoder", &mut self.gru.params)
    }
}

/// A contiguous window of at most `max_len` transitions ending at `end`
/// (exclusive) within one episode's slice.
pub fn window_from_episode<'a>(
    transitions: &'a [Transition],
    end: usize,
    max_len: usize,
) -> Result<Vec<&'a Transition>> {
    if end == 0 || end > transitions.len() {
        return Err(Error::argument("window end out of range"));
    }
    if max_len == 0 {
        return Err(Error::argument("window length must be positive"));
    }
    let start = end.saturating_sub(max_len);
    Ok(transitions[start..end].iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_window(n: usize, seed: u64) -> Vec<Transition> {
        let mut stream = rng::named_stream(seed, "ctx-toy");
        (0..n)
            .map(|_| {
                let mut v = |k: usize| -> Vec<f64> {
                    (0..k).map(|_| stream.gen_range(-1.0..1.0)).collect()
                };
                Transition {
                    state: v(2),
                    action: v(2),
                    reward: v(1)[0],
                    next_state: v(2),
                    done: false,
                    task_id: 0,
                }
            })
            .collect()
    }

    #[test]
    fn raw_inputs_concatenate_transition_fields() {
        let enc = ContextEncoder::new(ContextSource::RawTransitions, 7, 4, 1).unwrap();
        let ts = toy_window(3, 2);
        let refs: Vec<&Transition> = ts.iter().collect();
        let inputs = enc.inputs(None, &refs).unwrap();
        assert_eq!(inputs.len(), 3);
        let t = &ts[1];
        let mut expected = t.state.clone();
        expected.extend_from_slice(&t.action);
        expected.push(t.reward);
        expected.extend_from_slice(&t.next_state);
        assert_eq!(inputs[1], expected);
    }

    #[test]
    fn sf_source_without_network_is_rejected() {
        let enc = ContextEncoder::new(ContextSource::SfFeatures, 8, 4, 1).unwrap();
        let ts = toy_window(2, 3);
        let refs: Vec<&Transition> = ts.iter().collect();
        assert!(enc.inputs(None, &refs).is_err());
    }

    #[test]
    fn encode_matches_manual_gru_unroll() {
        let enc = ContextEncoder::new(ContextSource::RawTransitions, 7, 4, 5).unwrap();
        let ts = toy_window(6, 7);
        let refs: Vec<&Transition> = ts.iter().collect();
        let z = enc.encode(None, &refs).unwrap();
        let inputs = enc.inputs(None, &refs).unwrap();
        let mut h = alloc::vec![0.0; 4];
        for x in &inputs {
            h = enc.gru.eval_step(&h, x).unwrap();
        }
        assert_eq!(z, h);
    }

    #[test]
    fn tape_encoding_matches_frozen_encoding() {
        let enc = ContextEncoder::new(ContextSource::RawTransitions, 7, 4, 9).unwrap();
        let ts = toy_window(5, 11);
        let refs: Vec<&Transition> = ts.iter().collect();
        let frozen = enc.encode(None, &refs).unwrap();
        let mut tape = Tape::new();
        let set = tape.register_set();
        let node = enc.encode_on_tape(&mut tape, set, None, &refs).unwrap();
        let taped = tape.value(node).to_vec();
        for (a, b) in frozen.iter().zip(&taped) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn window_selection_takes_trailing_chunk() {
        let ts = toy_window(10, 13);
        let w = window_from_episode(&ts, 10, 4).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].state, ts[6].state);
        let w = window_from_episode(&ts, 3, 8).unwrap();
        assert_eq!(w.len(), 3);
        assert!(window_from_episode(&ts, 0, 4).is_err());
        assert!(window_from_episode(&ts, 11, 4).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_restores_checksum() {
        let enc = ContextEncoder::new(ContextSource::RawTransitions, 7, 4, 17).unwrap();
        let text = enc.encode_checkpoint(&[]);
        let mut other = ContextEncoder::new(ContextSource::RawTransitions, 7, 4, 99).unwrap();
        assert_ne!(other.checksum(), enc.checksum());
        other.restore_checkpoint(&checkpoint::decode(&text).unwrap()).unwrap();
        assert_eq!(other.checksum(), enc.checksum());
    }
}
