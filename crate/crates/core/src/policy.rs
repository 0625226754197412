//! Stage-3 training: a context-conditioned policy cloned from expert data,
//! trained jointly with the GRU context encoder. The SF network is frozen
//! here and only supplies encoder inputs.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::context::{window_from_episode, ContextEncoder};
use crate::diffkit::checkpoint::{self, EntryMap};
use crate::diffkit::{Activation, AdamState, Mlp, NodeId, SetId, Tape};
use crate::error::{Error, Result};
use crate::expert::TaskDataset;
use crate::mmd::{self, KernelConfig, SeparationSign};
use crate::rng;
use crate::sfnet::SfNetwork;

/// Deterministic policy a = bound * tanh(f(s, z)).
#[derive(Debug, Clone)]
pub struct ContextPolicy {
    pub net: Mlp,
    pub state_dim: usize,
    pub z_dim: usize,
    pub action_bound: f64,
}

impl ContextPolicy {
    pub fn new(
        state_dim: usize,
        z_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        action_bound: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = alloc::vec![state_dim + z_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        Ok(ContextPolicy {
            net: Mlp::new(&dims, Activation::Relu, Activation::Tanh, rng::derive(seed, "policy"))?,
            state_dim,
            z_dim,
            action_bound,
        })
    }

    pub fn act(&self, state: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || z.len() != self.z_dim {
            return Err(Error::dimension(alloc::format!(
                "policy input dims ({}, {}) do not match ({}, {})",
                state.len(),
                z.len(),
                self.state_dim,
                self.z_dim
            )));
        }
        let mut input = state.to_vec();
        input.extend_from_slice(z);
        let raw = self.net.eval(&input)?;
        Ok(raw.iter().map(|v| v * self.action_bound).collect())
    }

    /// Action node on the tape; `z` may carry gradients into the encoder.
    pub fn act_on_tape(
        &self,
        tape: &mut Tape,
        set: SetId,
        state: &[f64],
        z: NodeId,
    ) -> Result<NodeId> {
        let s = tape.constant(state);
        let input = tape.concat(s, z);
        let raw = self.net.forward(tape, set, input)?;
        Ok(tape.scale(raw, self.action_bound))
    }

    pub fn checksum(&self) -> u64 {
        self.net.params.checksum()
    }
}

/// Behavior-cloning loss for one task: MSE over action dims, averaged over
/// the (state, expert action) pairs, all conditioned on the same context.
pub fn build_loss_bc(
    policy: &ContextPolicy,
    tape: &mut Tape,
    set: SetId,
    z: NodeId,
    pairs: &[(&[f64], &[f64])],
) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(Error::argument("bc loss needs at least one pair"));
    }
    let mut losses = Vec::with_capacity(pairs.len());
    for (state, action) in pairs {
        let pred = policy.act_on_tape(tape, set, state, z)?;
        let target = tape.constant(action);
        losses.push(tape.mse(pred, target)?);
    }
    tape.mean_of(&losses)
}

pub fn loss_bc(
    policy: &ContextPolicy,
    z: &[f64],
    pairs: &[(&[f64], &[f64])],
) -> Result<f64> {
    let mut tape = Tape::new();
    let set = tape.register_set();
    let zn = tape.constant(z);
    let node = build_loss_bc(policy, &mut tape, set, zn, pairs)?;
    Ok(tape.scalar_value(node))
}

/// Pairwise separation loss over per-task groups of context vectors.
pub fn loss_context_sep(
    groups: &[Vec<Vec<f64>>],
    sign: SeparationSign,
    cfg: &KernelConfig,
) -> Result<f64> {
    mmd::pairwise_separation_loss(groups, sign, cfg)
}

#[derive(Debug, Clone)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    /// (state, action) pairs cloned per task per step.
    pub batch_per_task: usize,
    /// Maximum context window length.
    pub context_len: usize,
    /// Context vectors per task feeding the separation term.
    pub sep_windows: usize,
    pub lr: f64,
    pub w_bc: f64,
    pub w_mmd: f64,
    pub use_mmd: bool,
    pub sign: SeparationSign,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        PolicyTrainConfig {
            steps: 20_000,
            batch_per_task: 16,
            context_len: 64,
            sep_windows: 4,
            lr: 1e-3,
            w_bc: 1.0,
            w_mmd: 1.0,
            use_mmd: true,
            sign: SeparationSign::Separate,
            kernel: KernelConfig::default(),
            seed: 0,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCurveRow {
    pub step: usize,
    pub l_bc: f64,
    pub l_mmd: f64,
    pub l_total: f64,
}

/// Sample a context window: pick an episode, then a trailing chunk ending at
/// a random position within it.
fn sample_window<'a, R: Rng>(
    ds: &'a TaskDataset,
    max_len: usize,
    stream: &mut R,
) -> Result<Vec<&'a crate::envs::Transition>> {
    if ds.episodes.is_empty() {
        return Err(Error::argument("dataset has no episodes"));
    }
    let (start, end) = ds.episodes[stream.gen_range(0..ds.episodes.len())];
    let slice = &ds.transitions[start..end];
    let cut = stream.gen_range(1..=slice.len());
    window_from_episode(slice, cut, max_len)
}

/// Joint stage-3 training of policy and context encoder. The SF network is
/// read-only; callers should verify its checksum is unchanged afterwards.
pub fn train_policy(
    policy: &mut ContextPolicy,
    encoder: &mut ContextEncoder,
    net: Option<&SfNetwork>,
    datasets: &[TaskDataset],
    cfg: &PolicyTrainConfig,
) -> Result<Vec<PolicyCurveRow>> {
    if datasets.is_empty() || datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::argument("datasets must be nonempty"));
    }
    if cfg.use_mmd && (datasets.len() < 2 || cfg.sep_windows == 0) {
        return Err(Error::argument(
            "context separation needs at least 2 tasks and sep_windows >= 1",
        ));
    }
    if cfg.batch_per_task == 0 || cfg.context_len == 0 {
        return Err(Error::argument("batch_per_task and context_len must be positive"));
    }
    let mut opt_policy = AdamState::with_lr(&policy.net.params, cfg.lr);
    let mut opt_enc = AdamState::with_lr(&encoder.gru.params, cfg.lr);
    let mut curves = Vec::new();

    for step in 0..cfg.steps {
        let mut stream =
            rng::tagged_stream(cfg.seed, &[rng::fnv1a64(b"policy-train"), step as u64]);
        let mut tape = Tape::new();
        let policy_set = tape.register_set();
        let enc_set = tape.register_set();

        // BC term: one context window plus a pair batch per task.
        let mut bc_losses = Vec::with_capacity(datasets.len());
        for ds in datasets {
            let window = sample_window(ds, cfg.context_len, &mut stream)?;
            let z = encoder.encode_on_tape(&mut tape, enc_set, net, &window)?;
            let pairs: Vec<(&[f64], &[f64])> = (0..cfg.batch_per_task)
                .map(|_| {
                    let t = &ds.transitions[stream.gen_range(0..ds.len())];
                    (t.state.as_slice(), t.action.as_slice())
                })
                .collect();
            bc_losses.push(build_loss_bc(policy, &mut tape, policy_set, z, &pairs)?);
        }
        let mut l_bc = tape.scalar(0.0);
        for n in &bc_losses {
            l_bc = tape.add(l_bc, *n)?;
        }
        let l_bc_value = tape.scalar_value(l_bc);

        // Separation term over freshly sampled windows.
        let mut l_mmd_value = 0.0;
        let mut total = tape.scale(l_bc, cfg.w_bc);
        if cfg.use_mmd {
            let mut groups: Vec<Vec<NodeId>> = Vec::with_capacity(datasets.len());
            for ds in datasets {
                let mut group = Vec::with_capacity(cfg.sep_windows);
                for _ in 0..cfg.sep_windows {
                    let window = sample_window(ds, cfg.context_len, &mut stream)?;
                    group.push(encoder.encode_on_tape(&mut tape, enc_set, net, &window)?);
                }
                groups.push(group);
            }
            let l_mmd =
                mmd::pairwise_separation_on_tape(&mut tape, &groups, cfg.sign, &cfg.kernel)?;
            l_mmd_value = tape.scalar_value(l_mmd);
            let scaled = tape.scale(l_mmd, cfg.w_mmd);
            total = tape.add(total, scaled)?;
        }
        let total_value = tape.scalar_value(total);
        if !total_value.is_finite() {
            return Err(Error::numeric(alloc::format!(
                "non-finite policy loss at step {step}"
            )));
        }

        tape.backward(total, &mut [&mut policy.net.params, &mut encoder.gru.params])?;
        opt_policy.step(&mut policy.net.params)?;
        opt_enc.step(&mut encoder.gru.params)?;

        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            curves.push(PolicyCurveRow {
                step,
                l_bc: l_bc_value,
                l_mmd: l_mmd_value,
                l_total: total_value,
            });
        }
    }
    Ok(curves)
}

pub fn encode_policy_checkpoint(
    policy: &ContextPolicy,
    encoder: &ContextEncoder,
    extra: &[(String, Vec<usize>, Vec<f64>)],
) -> String {
    checkpoint::encode(
        &[("policy", &policy.net.params), ("encoder", &encoder.gru.params)],
        extra,
    )
}

pub fn restore_policy_checkpoint(
    map: &EntryMap,
    policy: &mut ContextPolicy,
    encoder: &mut ContextEncoder,
) -> Result<()> {
    checkpoint::apply(map, "policy", &mut policy.net.params)?;
    checkpoint::apply(map, "encoder", &mut encoder.gru.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextSource;
    use crate::envs::EnvFamily;
    use crate::expert;

    #[test]
    fn act_clamps_through_tanh_times_bound() {
        let policy = ContextPolicy::new(2, 3, 2, &[8], 1.0, 1).unwrap();
        let a = policy.act(&[0.3, -0.4], &[0.1, 0.2, -0.5]).unwrap();
        assert_eq!(a.len(), 2);
        for v in &a {
            assert!(v.abs() <= 1.0);
        }
        assert!(policy.act(&[0.3], &[0.1, 0.2, -0.5]).is_err());
    }

    #[test]
    fn bc_loss_single_pair_matches_hand_value() {
        // Zero-weight policy outputs tanh(0) = 0, so against target (1, 0)
        // the per-dim MSE is (1 + 0) / 2.
        let mut policy = ContextPolicy::new(1, 1, 2, &[4], 1.0, 2).unwrap();
        for (_, e) in policy.net.params.iter_mut() {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let pairs: Vec<(&[f64], &[f64])> = alloc::vec![(&[0.7][..], &[1.0, 0.0][..])];
        let got = loss_bc(&policy, &[0.0], &pairs).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bc_loss_averages_over_pairs() {
        let policy = ContextPolicy::new(1, 1, 1, &[4], 1.0, 3).unwrap();
        let z = [0.2];
        let p1: Vec<(&[f64], &[f64])> = alloc::vec![(&[0.1][..], &[0.5][..])];
        let p2: Vec<(&[f64], &[f64])> = alloc::vec![(&[-0.3][..], &[-0.2][..])];
        let both: Vec<(&[f64], &[f64])> =
            alloc::vec![(&[0.1][..], &[0.5][..]), (&[-0.3][..], &[-0.2][..])];
        let a = loss_bc(&policy, &z, &p1).unwrap();
        let b = loss_bc(&policy, &z, &p2).unwrap();
        let c = loss_bc(&policy, &z, &both).unwrap();
        assert!((c - 0.5 * (a + b)).abs() < 1e-12);
    }

    fn tiny_setup(seed: u64) -> (EnvFamily, Vec<TaskDataset>) {
        let family = EnvFamily::point_vel();
        let tasks = family.sample_tasks(2, seed).unwrap();
        let cfg = expert::CollectConfig { n_transitions: 192, action_noise: 0.05 };
        let datasets = tasks
            .iter()
            .map(|t| expert::collect_expert(&family, t, &cfg, seed).unwrap())
            .collect();
        (family, datasets)
    }

    #[test]
    fn training_reduces_bc_loss_with_raw_contexts() {
        let (family, datasets) = tiny_setup(5);
        let input_dim =
            ContextSource::RawTransitions.input_dim(family.state_dim, family.action_dim, 0);
        let mut encoder = ContextEncoder::new(ContextSource::RawTransitions, input_dim, 4, 5).unwrap();
        let mut policy =
            ContextPolicy::new(family.state_dim, 4, family.action_dim, &[16], family.action_bound, 5)
                .unwrap();
        let cfg = PolicyTrainConfig {
            steps: 150,
            batch_per_task: 8,
            context_len: 16,
            sep_windows: 2,
            log_every: 1,
            seed: 5,
            ..PolicyTrainConfig::default()
        };
        let curves = train_policy(&mut policy, &mut encoder, None, &datasets, &cfg).unwrap();
        assert_eq!(curves.len(), 150);
        let early: f64 = curves[..10].iter().map(|r| r.l_bc).sum::<f64>() / 10.0;
        let late: f64 = curves[140..].iter().map(|r| r.l_bc).sum::<f64>() / 10.0;
        assert!(late < early, "late {late} vs early {early}");
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let (family, datasets) = tiny_setup(7);
        let run = || {
            let input_dim =
                ContextSource::RawTransitions.input_dim(family.state_dim, family.action_dim, 0);
            let mut encoder =
                ContextEncoder::new(ContextSource::RawTransitions, input_dim, 4, 7).unwrap();
            let mut policy = ContextPolicy::new(
                family.state_dim,
                4,
                family.action_dim,
                &[8],
                family.action_bound,
                7,
            )
            .unwrap();
            let cfg = PolicyTrainConfig {
                steps: 12,
                batch_per_task: 4,
                context_len: 8,
                sep_windows: 2,
                seed: 7,
                ..PolicyTrainConfig::default()
            };
            train_policy(&mut policy, &mut encoder, None, &datasets, &cfg).unwrap();
            (policy.checksum(), encoder.checksum())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip_restores_both_parts() {
        let policy = ContextPolicy::new(2, 4, 2, &[8], 1.0, 11).unwrap();
        let encoder = ContextEncoder::new(ContextSource::RawTransitions, 7, 4, 11).unwrap();
        let text = encode_policy_checkpoint(&policy, &encoder, &[]);
        let mut p2 = ContextPolicy::new(2, 4, 2, &[8], 1.0, 50).unwrap();
        let mut e2 = ContextEncoder::new(ContextSource::RawTransitions, 7, 4, 50).unwrap();
        let map = checkpoint::decode(&text).unwrap();
        restore_policy_checkpoint(&map, &mut p2, &mut e2).unwrap();
        assert_eq!(p2.checksum(), policy.checksum());
        assert_eq!(e2.checksum(), encoder.checksum());
    }

    #[test]
    fn single_task_with_mmd_is_rejected() {
        let (family, datasets) = tiny_setup(13);
        let input_dim =
            ContextSource::RawTransitions.input_dim(family.state_dim, family.action_dim, 0);
        let mut encoder = ContextEncoder::new(ContextSource::RawTransitions, input_dim, 4, 13).unwrap();
        let mut policy =
            ContextPolicy::new(family.state_dim, 4, family.action_dim, &[8], family.action_bound, 13)
                .unwrap();
        let cfg = PolicyTrainConfig { steps: 1, seed: 13, ..PolicyTrainConfig::default() };
        assert!(train_policy(&mut policy, &mut encoder, None, &datasets[..1], &cfg).is_err());
    }
}
