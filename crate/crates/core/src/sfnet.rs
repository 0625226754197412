//! Successor-feature network: state features phi, successor features psi,
//! approximate reward weights omega', next-state reconstruction, and the
//! four-term stage-2 training loss.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::diffkit::checkpoint::{self, EntryMap};
use crate::diffkit::{Activation, AdamState, Mlp, NodeId, SetId, Tape};
use crate::error::{Error, Result};
use crate::expert::TaskDataset;
use crate::envs::Transition;
use crate::mmd::{self, KernelConfig, SeparationSign};
use crate::rng;

/// Network heads:
///
/// - `phi`: state -> d (state features)
/// - `sf_head`: d -> d (successor features of the current state)
/// - `omega_head`: (phi, action, reward) -> d (approximate reward weights)
/// - `recon_head`: (phi, action) -> state (next-state prediction)
///
/// `sf_target` is a soft-updated trailing copy of `sf_head` used for TD
/// targets.
#[derive(Debug, Clone)]
pub struct SfNetwork {
    pub feature_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub gamma: f64,
    pub phi: Mlp,
    pub sf_head: Mlp,
    pub omega_head: Mlp,
    pub recon_head: Mlp,
    pub sf_target: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfOutputs {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub omega: Vec<f64>,
    pub s_next_pred: Vec<f64>,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = alloc::vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

impl SfNetwork {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        feature_dim: usize,
        hidden: &[usize],
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        let d = feature_dim;
        let phi = Mlp::new(
            &dims(state_dim, hidden, d),
            Activation::Tanh,
            Activation::Identity,
            rng::derive(seed, "sf.phi"),
        )?;
        let sf_head = Mlp::new(
            &dims(d, hidden, d),
            Activation::Tanh,
            Activation::Identity,
            rng::derive(seed, "sf.psi"),
        )?;
        let omega_head = Mlp::new(
            &dims(d + action_dim + 1, hidden, d),
            Activation::Tanh,
            Activation::Identity,
            rng::derive(seed, "sf.omega"),
        )?;
        let recon_head = Mlp::new(
            &dims(d + action_dim, hidden, state_dim),
            Activation::Tanh,
            Activation::Identity,
            rng::derive(seed, "sf.recon"),
        )?;
        let sf_target = sf_head.clone();
        Ok(SfNetwork {
            feature_dim,
            state_dim,
            action_dim,
            gamma,
            phi,
            sf_head,
            omega_head,
            recon_head,
            sf_target,
        })
    }

    fn check_transition(&self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim
            || t.next_state.len() != self.state_dim
            || t.action.len() != self.action_dim
        {
            return Err(Error::dimension(alloc::format!(
                "transition dims ({}, {}) do not match network ({}, {})",
                t.state.len(),
                t.action.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        Ok(())
    }

    /// Frozen forward pass for one transition.
    pub fn forward(&self, t: &Transition) -> Result<SfOutputs> {
        self.check_transition(t)?;
        let phi = self.phi.eval(&t.state)?;
        let psi = self.sf_head.eval(&phi)?;
        let mut omega_in = phi.clone();
        omega_in.extend_from_slice(&t.action);
        omega_in.push(t.reward);
        let omega = self.omega_head.eval(&omega_in)?;
        let mut recon_in = phi.clone();
        recon_in.extend_from_slice(&t.action);
        let s_next_pred = self.recon_head.eval(&recon_in)?;
        Ok(SfOutputs { phi, psi, omega, s_next_pred })
    }

    /// Polyak update of the target SF head toward the live head.
    pub fn soft_update_target(&mut self, tau: f64) {
        for (name, e) in self.sf_target.params.iter_mut() {
            let src = &self.sf_head.params.get(name).unwrap().values;
            for (t, s) in e.values.iter_mut().zip(src) {
                *t = (1.0 - tau) * *t + tau * s;
            }
        }
    }

    /// L2 distance between live and target SF head parameters.
    pub fn target_gap(&self) -> f64 {
        let mut acc = 0.0;
        for (name, e) in self.sf_target.params.iter() {
            let src = &self.sf_head.params.get(name).unwrap().values;
            for (t, s) in e.values.iter().zip(src) {
                acc += (t - s) * (t - s);
            }
        }
        libm::sqrt(acc)
    }

    pub fn checksum(&self) -> u64 {
        self.phi
            .params
            .checksum()
            .wrapping_mul(31)
            .wrapping_add(self.sf_head.params.checksum())
            .wrapping_mul(31)
            .wrapping_add(self.omega_head.params.checksum())
            .wrapping_mul(31)
            .wrapping_add(self.recon_head.params.checksum())
    }

    pub fn encode_checkpoint(&self, extra: &[(String, Vec<usize>, Vec<f64>)]) -> String {
        checkpoint::encode(
            &[
                ("phi", &self.phi.params),
                ("sf_head", &self.sf_head.params),
                ("omega_head", &self.omega_head.params),
                ("recon_head", &self.recon_head.params),
                ("sf_target", &self.sf_target.params),
            ],
            extra,
        )
    }

    pub fn restore_checkpoint(&mut self, map: &EntryMap) -> Result<()> {
        checkpoint::apply(map, "phi", &mut self.phi.params)?;
        checkpoint::apply(map, "sf_head", &mut self.sf_head.params)?;
        checkpoint::apply(map, "omega_head", &mut self.omega_head.params)?;
        checkpoint::apply(map, "recon_head", &mut self.recon_head.params)?;
        checkpoint::apply(map, "sf_target", &mut self.sf_target.params)
    }
}

/// Tape set ids for the four trainable heads.
#[derive(Debug, Clone, Copy)]
pub struct SfSets {
    pub phi: SetId,
    pub sf: SetId,
    pub omega: SetId,
    pub recon: SetId,
}

impl SfSets {
    pub fn register(tape: &mut Tape) -> Self {
        SfSets {
            phi: tape.register_set(),
            sf: tape.register_set(),
            omega: tape.register_set(),
            recon: tape.register_set(),
        }
    }
}

fn ensure_batch(batch: &[&Transition]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    Ok(())
}

/// phi(s_t) on the tape, or as a constant when the encoder is frozen.
fn phi_node(
    net: &SfNetwork,
    tape: &mut Tape,
    sets: &SfSets,
    state: &[f64],
    freeze_phi: bool,
) -> Result<NodeId> {
    if freeze_phi {
        let v = net.phi.eval(state)?;
        Ok(tape.constant(&v))
    } else {
        let s = tape.constant(state);
        net.phi.forward(tape, sets.phi, s)
    }
}

/// Reward-prediction loss: MSE of phi(s_t)^T omega' against r_t over a batch.
pub fn build_loss_reward(
    net: &SfNetwork,
    tape: &mut Tape,
    sets: &SfSets,
    batch: &[&Transition],
    freeze_phi: bool,
) -> Result<NodeId> {
    ensure_batch(batch)?;
    let mut residuals = Vec::with_capacity(batch.len());
    for t in batch {
        net.check_transition(t)?;
        let phi = phi_node(net, tape, sets, &t.state, freeze_phi)?;
        let mut ar = t.action.clone();
        ar.push(t.reward);
        let ar_node = tape.constant(&ar);
        let omega_in = tape.concat(phi, ar_node);
        let omega = net.omega_head.forward(tape, sets.omega, omega_in)?;
        let pred = tape.dot(phi, omega)?;
        let target = tape.constant(&[t.reward]);
        residuals.push(tape.mse(pred, target)?);
    }
    tape.mean_of(&residuals)
}

/// Next-state reconstruction loss, averaged over batch and state dims.
pub fn build_loss_recon(
    net: &SfNetwork,
    tape: &mut Tape,
    sets: &SfSets,
    batch: &[&Transition],
    freeze_phi: bool,
) -> Result<NodeId> {
    ensure_batch(batch)?;
    let mut residuals = Vec::with_capacity(batch.len());
    for t in batch {
        net.check_transition(t)?;
        let phi = phi_node(net, tape, sets, &t.state, freeze_phi)?;
        let a = tape.constant(&t.action);
        let recon_in = tape.concat(phi, a);
        let pred = net.recon_head.forward(tape, sets.recon, recon_in)?;
        let target = tape.constant(&t.next_state);
        residuals.push(tape.mse(pred, target)?);
    }
    tape.mean_of(&residuals)
}

/// TD targets phi(s_t) + gamma * psi_target(s_{t+1}), evaluated with frozen
/// parameters. Terminal transitions use phi(s_t) alone when
/// `bootstrap_on_done` is false.
pub fn td_targets(
    net: &SfNetwork,
    batch: &[&Transition],
    bootstrap_on_done: bool,
) -> Result<Vec<Vec<f64>>> {
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        net.check_transition(t)?;
        let mut target = net.phi.eval(&t.state)?;
        if bootstrap_on_done || !t.done {
            let phi_next = net.phi.eval(&t.next_state)?;
            let psi_next = net.sf_target.eval(&phi_next)?;
            for (x, p) in target.iter_mut().zip(&psi_next) {
                *x += net.gamma * p;
            }
        }
        targets.push(target);
    }
    Ok(targets)
}

/// TD loss of psi(s_t) against precomputed stop-gradient targets.
pub fn build_loss_td(
    net: &SfNetwork,
    tape: &mut Tape,
    sets: &SfSets,
    batch: &[&Transition],
    targets: &[Vec<f64>],
    freeze_phi: bool,
) -> Result<NodeId> {
    ensure_batch(batch)?;
    if targets.len() != batch.len() {
        return Err(Error::dimension("td targets length mismatch".to_string()));
    }
    let mut residuals = Vec::with_capacity(batch.len());
    for (t, target) in batch.iter().zip(targets) {
        let phi = phi_node(net, tape, sets, &t.state, freeze_phi)?;
        let psi = net.sf_head.forward(tape, sets.sf, phi)?;
        let y = tape.constant(target);
        residuals.push(tape.mse(psi, y)?);
    }
    tape.mean_of(&residuals)
}

/// Pairwise separation loss over per-task sets of omega' vectors.
pub fn build_loss_mmd_omega(
    net: &SfNetwork,
    tape: &mut Tape,
    sets: &SfSets,
    per_task: &[Vec<&Transition>],
    kernel: &KernelConfig,
    freeze_phi: bool,
) -> Result<NodeId> {
    if per_task.len() < 2 {
        return Err(Error::argument("omega MMD loss needs at least 2 tasks"));
    }
    let mut groups: Vec<Vec<NodeId>> = Vec::with_capacity(per_task.len());
    for batch in per_task {
        ensure_batch(batch)?;
        let mut group = Vec::with_capacity(batch.len());
        for t in batch.iter() {
            let phi = phi_node(net, tape, sets, &t.state, freeze_phi)?;
            let mut ar = t.action.clone();
            ar.push(t.reward);
            let ar_node = tape.constant(&ar);
            let omega_in = tape.concat(phi, ar_node);
            group.push(net.omega_head.forward(tape, sets.omega, omega_in)?);
        }
        groups.push(group);
    }
    mmd::pairwise_separation_on_tape(tape, &groups, SeparationSign::Separate, kernel)
}

/// Evaluation wrappers: build on a scratch tape, return the scalar.
pub fn loss_reward(net: &SfNetwork, batch: &[&Transition]) -> Result<f64> {
    let mut tape = Tape::new();
    let sets = SfSets::register(&mut tape);
    let node = build_loss_reward(net, &mut tape, &sets, batch, false)?;
    Ok(tape.scalar_value(node))
}

pub fn loss_recon(net: &SfNetwork, batch: &[&Transition]) -> Result<f64> {
    let mut tape = Tape::new();
    let sets = SfSets::register(&mut tape);
    let node = build_loss_recon(net, &mut tape, &sets, batch, false)?;
    Ok(tape.scalar_value(node))
}

pub fn loss_td(net: &SfNetwork, batch: &[&Transition], bootstrap_on_done: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let sets = SfSets::register(&mut tape);
    let targets = td_targets(net, batch, bootstrap_on_done)?;
    let node = build_loss_td(net, &mut tape, &sets, batch, &targets, false)?;
    Ok(tape.scalar_value(node))
}

pub fn loss_mmd_omega(
    net: &SfNetwork,
    per_task: &[Vec<&Transition>],
    kernel: &KernelConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let sets = SfSets::register(&mut tape);
    let node = build_loss_mmd_omega(net, &mut tape, &sets, per_task, kernel, false)?;
    Ok(tape.scalar_value(node))
}

// ── Stage-2 training ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SfTrainConfig {
    pub steps: usize,
    pub batch_per_task: usize,
    /// How many of the sampled transitions per task feed the MMD term.
    pub mmd_samples: usize,
    pub lr: f64,
    pub tau: f64,
    pub use_reward: bool,
    pub use_recon: bool,
    pub use_td: bool,
    pub use_mmd: bool,
    pub w_reward: f64,
    pub w_recon: f64,
    pub w_td: f64,
    pub w_mmd: f64,
    pub freeze_phi: bool,
    pub bootstrap_on_done: bool,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for SfTrainConfig {
    fn default() -> Self {
        SfTrainConfig {
            steps: 20_000,
            batch_per_task: 64,
            mmd_samples: 16,
            lr: 1e-3,
            tau: 0.01,
            use_reward: true,
            use_recon: true,
            use_td: true,
            use_mmd: true,
            w_reward: 1.0,
            w_recon: 1.0,
            w_td: 1.0,
            w_mmd: 1.0,
            freeze_phi: false,
            bootstrap_on_done: true,
            kernel: KernelConfig::default(),
            seed: 0,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfCurveRow {
    pub step: usize,
    pub l_reward: f64,
    pub l_recon: f64,
    pub l_td: f64,
    pub l_mmd: f64,
    pub l_total: f64,
}

/// Stage-2 trainer; holds optimizer state so the CLI can checkpoint and
/// resume mid-run.
pub struct SfTrainer {
    cfg: SfTrainConfig,
    opt_phi: AdamState,
    opt_sf: AdamState,
    opt_omega: AdamState,
    opt_recon: AdamState,
    pub step: usize,
}

impl SfTrainer {
    pub fn new(net: &SfNetwork, cfg: SfTrainConfig) -> Result<Self> {
        if cfg.batch_per_task == 0 || cfg.mmd_samples == 0 {
            return Err(Error::argument("batch sizes must be positive"));
        }
        Ok(SfTrainer {
            opt_phi: AdamState::with_lr(&net.phi.params, cfg.lr),
            opt_sf: AdamState::with_lr(&net.sf_head.params, cfg.lr),
            opt_omega: AdamState::with_lr(&net.omega_head.params, cfg.lr),
            opt_recon: AdamState::with_lr(&net.recon_head.params, cfg.lr),
            cfg,
            step: 0,
        })
    }

    pub fn config(&self) -> &SfTrainConfig {
        &self.cfg
    }

    /// Run `n_steps` update steps, appending curve rows every `log_every`.
    pub fn run(
        &mut self,
        net: &mut SfNetwork,
        datasets: &[TaskDataset],
        n_steps: usize,
    ) -> Result<Vec<SfCurveRow>> {
        let cfg = self.cfg.clone();
        if cfg.use_mmd && datasets.len() < 2 {
            return Err(Error::argument("MMD term needs at least 2 tasks"));
        }
        if datasets.is_empty() || datasets.iter().any(|d| d.is_empty()) {
            return Err(Error::argument("datasets must be nonempty"));
        }
        let mut curves = Vec::new();
        for _ in 0..n_steps {
            let step = self.step;
            let mut stream =
                rng::tagged_stream(cfg.seed, &[rng::fnv1a64(b"sf-train"), step as u64]);
            // Per-task minibatches sampled uniformly with replacement.
            let batches: Vec<Vec<&Transition>> = datasets
                .iter()
                .map(|ds| {
                    (0..cfg.batch_per_task)
                        .map(|_| &ds.transitions[stream.gen_range(0..ds.len())])
                        .collect()
                })
                .collect();
            let flat: Vec<&Transition> = batches.iter().flatten().copied().collect();

            let mut tape = Tape::new();
            let sets = SfSets::register(&mut tape);
            let mut terms: Vec<(&str, f64, NodeId)> = Vec::new();
            let mut values = [0.0f64; 4];
            if cfg.use_reward {
                let n = build_loss_reward(net, &mut tape, &sets, &flat, cfg.freeze_phi)?;
                values[0] = tape.scalar_value(n);
                terms.push(("reward", cfg.w_reward, n));
            }
            if cfg.use_recon {
                let n = build_loss_recon(net, &mut tape, &sets, &flat, cfg.freeze_phi)?;
                values[1] = tape.scalar_value(n);
                terms.push(("recon", cfg.w_recon, n));
            }
            if cfg.use_td {
                let targets = td_targets(net, &flat, cfg.bootstrap_on_done)?;
                let n = build_loss_td(net, &mut tape, &sets, &flat, &targets, cfg.freeze_phi)?;
                values[2] = tape.scalar_value(n);
                terms.push(("td", cfg.w_td, n));
            }
            if cfg.use_mmd {
                let mmd_batches: Vec<Vec<&Transition>> = batches
                    .iter()
                    .map(|b| b.iter().take(cfg.mmd_samples).copied().collect())
                    .collect();
                let n = build_loss_mmd_omega(
                    net,
                    &mut tape,
                    &sets,
                    &mmd_batches,
                    &cfg.kernel,
                    cfg.freeze_phi,
                )?;
                values[3] = tape.scalar_value(n);
                terms.push(("mmd", cfg.w_mmd, n));
            }

            let mut total_value = 0.0;
            if !terms.is_empty() {
                let mut acc = tape.scalar(0.0);
                for (name, weight, node) in &terms {
                    let v = tape.scalar_value(*node);
                    if !v.is_finite() {
                        return Err(Error::numeric(alloc::format!(
                            "non-finite {name} loss at step {step}"
                        )));
                    }
                    let scaled = tape.scale(*node, *weight);
                    acc = tape.add(acc, scaled)?;
                }
                total_value = tape.scalar_value(acc);
                tape.backward(
                    acc,
                    &mut [
                        &mut net.phi.params,
                        &mut net.sf_head.params,
                        &mut net.omega_head.params,
                        &mut net.recon_head.params,
                    ],
                )?;
                if cfg.freeze_phi {
                    net.phi.params.zero_grads();
                } else {
                    self.opt_phi.step(&mut net.phi.params)?;
                }
                self.opt_sf.step(&mut net.sf_head.params)?;
                self.opt_omega.step(&mut net.omega_head.params)?;
                self.opt_recon.step(&mut net.recon_head.params)?;
                net.soft_update_target(cfg.tau);
            }

            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                curves.push(SfCurveRow {
                    step,
                    l_reward: values[0],
                    l_recon: values[1],
                    l_td: values[2],
                    l_mmd: values[3],
                    l_total: total_value,
                });
            }
            self.step += 1;
        }
        Ok(curves)
    }

    pub fn export_opt_entries(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = self.opt_phi.export_entries("opt.phi");
        out.extend(self.opt_sf.export_entries("opt.sf_head"));
        out.extend(self.opt_omega.export_entries("opt.omega_head"));
        out.extend(self.opt_recon.export_entries("opt.recon_head"));
        out.push(("opt.step".to_string(), alloc::vec![1], alloc::vec![self.step as f64]));
        out
    }

    pub fn restore_opt_entries(
        &mut self,
        entries: &BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    ) -> Result<()> {
        self.opt_phi.restore_entries("opt.phi", entries)?;
        self.opt_sf.restore_entries("opt.sf_head", entries)?;
        self.opt_omega.restore_entries("opt.omega_head", entries)?;
        self.opt_recon.restore_entries("opt.recon_head", entries)?;
        let (_, v) = entries
            .get("opt.step")
            .ok_or_else(|| Error::argument("missing checkpoint entry opt.step"))?;
        self.step = v[0] as usize;
        Ok(())
    }
}

/// One-shot stage-2 training.
pub fn train_sf(
    net: &mut SfNetwork,
    datasets: &[TaskDataset],
    cfg: &SfTrainConfig,
) -> Result<Vec<SfCurveRow>> {
    let mut trainer = SfTrainer::new(net, cfg.clone())?;
    trainer.run(net, datasets, cfg.steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvFamily, Family};
    use crate::expert;

    fn small_net(seed: u64) -> SfNetwork {
        SfNetwork::new(2, 2, 4, &[8], 0.99, seed).unwrap()
    }

    fn toy_transition(seed: u64) -> Transition {
        let mut stream = rng::named_stream(seed, "toy");
        let mut v = |n: usize| -> Vec<f64> {
            (0..n).map(|_| stream.gen_range(-1.0..1.0)).collect()
        };
        Transition {
            state: v(2),
            action: v(2),
            reward: v(1)[0],
            next_state: v(2),
            done: false,
            task_id: 0,
        }
    }

    #[test]
    fn forward_matches_head_composition() {
        let net = small_net(3);
        let t = toy_transition(5);
        let out = net.forward(&t).unwrap();
        let phi = net.phi.eval(&t.state).unwrap();
        assert_eq!(out.phi, phi);
        assert_eq!(out.psi, net.sf_head.eval(&phi).unwrap());
        let mut omega_in = phi.clone();
        omega_in.extend_from_slice(&t.action);
        omega_in.push(t.reward);
        assert_eq!(out.omega, net.omega_head.eval(&omega_in).unwrap());
    }

    #[test]
    fn reward_loss_matches_scalar_oracle() {
        let net = small_net(7);
        let ts: Vec<Transition> = (0..5).map(|i| toy_transition(100 + i)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let got = loss_reward(&net, &batch).unwrap();
        let mut expected = 0.0;
        for t in &batch {
            let out = net.forward(t).unwrap();
            let pred: f64 = out.phi.iter().zip(&out.omega).map(|(a, b)| a * b).sum();
            expected += (pred - t.reward) * (pred - t.reward);
        }
        expected /= batch.len() as f64;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn recon_loss_matches_scalar_oracle() {
        let net = small_net(11);
        let ts: Vec<Transition> = (0..4).map(|i| toy_transition(200 + i)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let got = loss_recon(&net, &batch).unwrap();
        let mut expected = 0.0;
        for t in &batch {
            let out = net.forward(t).unwrap();
            let per: f64 = out
                .s_next_pred
                .iter()
                .zip(&t.next_state)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / t.next_state.len() as f64;
            expected += per;
        }
        expected /= batch.len() as f64;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn td_loss_matches_scalar_oracle_and_respects_done() {
        let net = small_net(13);
        let mut ts: Vec<Transition> = (0..4).map(|i| toy_transition(300 + i)).collect();
        ts[2].done = true;
        let batch: Vec<&Transition> = ts.iter().collect();
        let got = loss_td(&net, &batch, false).unwrap();
        let mut expected = 0.0;
        for t in &batch {
            let out = net.forward(t).unwrap();
            let mut target = out.phi.clone();
            if !t.done {
                let phi_next = net.phi.eval(&t.next_state).unwrap();
                let psi_next = net.sf_target.eval(&phi_next).unwrap();
                for (x, p) in target.iter_mut().zip(&psi_next) {
                    *x += net.gamma * p;
                }
            }
            let per: f64 = out
                .psi
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / target.len() as f64;
            expected += per;
        }
        expected /= batch.len() as f64;
        assert!((got - expected).abs() < 1e-12);

        let boot = loss_td(&net, &batch, true).unwrap();
        assert!((boot - got).abs() > 1e-9);
    }

    #[test]
    fn omega_mmd_loss_matches_untaped_estimator() {
        let net = small_net(17);
        let a: Vec<Transition> = (0..3).map(|i| toy_transition(400 + i)).collect();
        let b: Vec<Transition> = (0..3).map(|i| toy_transition(500 + i)).collect();
        let per_task = alloc::vec![
            a.iter().collect::<Vec<_>>(),
            b.iter().collect::<Vec<_>>(),
        ];
        let cfg = KernelConfig::fixed(1.0);
        let got = loss_mmd_omega(&net, &per_task, &cfg).unwrap();
        let omegas: Vec<Vec<Vec<f64>>> = per_task
            .iter()
            .map(|g| g.iter().map(|t| net.forward(t).unwrap().omega).collect())
            .collect();
        let expected =
            mmd::pairwise_separation_loss(&omegas, SeparationSign::Separate, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn soft_update_moves_target_toward_live_head() {
        let mut net = small_net(19);
        let gap0 = net.target_gap();
        assert!(gap0 < 1e-15);
        // Perturb the live head, then half-step the target toward it.
        for (_, e) in net.sf_head.params.iter_mut() {
            for v in e.values.iter_mut() {
                *v += 1.0;
            }
        }
        let gap1 = net.target_gap();
        net.soft_update_target(0.5);
        let gap2 = net.target_gap();
        assert!((gap2 - 0.5 * gap1).abs() < 1e-9);
        net.soft_update_target(1.0);
        assert!(net.target_gap() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let net = small_net(23);
        let text = net.encode_checkpoint(&[]);
        let map = checkpoint::decode(&text).unwrap();
        let mut other = small_net(99);
        assert_ne!(other.checksum(), net.checksum());
        other.restore_checkpoint(&map).unwrap();
        assert_eq!(other.checksum(), net.checksum());
        assert_eq!(other.encode_checkpoint(&[]), text);
    }

    fn tiny_datasets(seed: u64) -> (EnvFamily, Vec<TaskDataset>) {
        let family = EnvFamily::point_vel();
        let tasks = family.sample_tasks(2, seed).unwrap();
        let cfg = expert::CollectConfig { n_transitions: 256, action_noise: 0.05 };
        let datasets = tasks
            .iter()
            .map(|t| expert::collect_expert(&family, t, &cfg, seed).unwrap())
            .collect();
        (family, datasets)
    }

    #[test]
    fn training_reduces_total_loss() {
        let (family, datasets) = tiny_datasets(29);
        let mut net =
            SfNetwork::new(family.state_dim, family.action_dim, 4, &[16], family.gamma, 29)
                .unwrap();
        let cfg = SfTrainConfig {
            steps: 120,
            batch_per_task: 16,
            mmd_samples: 8,
            log_every: 1,
            seed: 29,
            ..SfTrainConfig::default()
        };
        let curves = train_sf(&mut net, &datasets, &cfg).unwrap();
        assert_eq!(curves.len(), 120);
        let early: f64 = curves[..10].iter().map(|r| r.l_reward + r.l_recon).sum::<f64>() / 10.0;
        let late: f64 =
            curves[110..].iter().map(|r| r.l_reward + r.l_recon).sum::<f64>() / 10.0;
        assert!(late < early, "late {late} vs early {early}");
    }

    #[test]
    fn freeze_phi_keeps_encoder_fixed() {
        let (family, datasets) = tiny_datasets(31);
        let mut net =
            SfNetwork::new(family.state_dim, family.action_dim, 4, &[16], family.gamma, 31)
                .unwrap();
        let before = net.phi.params.checksum();
        let cfg = SfTrainConfig {
            steps: 10,
            batch_per_task: 8,
            mmd_samples: 4,
            freeze_phi: true,
            seed: 31,
            ..SfTrainConfig::default()
        };
        train_sf(&mut net, &datasets, &cfg).unwrap();
        assert_eq!(net.phi.params.checksum(), before);
    }

    #[test]
    fn trainer_resume_matches_uninterrupted_run() {
        let (family, datasets) = tiny_datasets(37);
        let make_net = || {
            SfNetwork::new(family.state_dim, family.action_dim, 4, &[8], family.gamma, 37)
                .unwrap()
        };
        let cfg = SfTrainConfig {
            steps: 20,
            batch_per_task: 8,
            mmd_samples: 4,
            seed: 37,
            ..SfTrainConfig::default()
        };

        let mut straight = make_net();
        let mut trainer = SfTrainer::new(&straight, cfg.clone()).unwrap();
        trainer.run(&mut straight, &datasets, 20).unwrap();

        let mut halved = make_net();
        let mut t1 = SfTrainer::new(&halved, cfg.clone()).unwrap();
        t1.run(&mut halved, &datasets, 10).unwrap();
        let text = halved.encode_checkpoint(&t1.export_opt_entries());

        let mut resumed = make_net();
        let map = checkpoint::decode(&text).unwrap();
        resumed.restore_checkpoint(&map).unwrap();
        let mut t2 = SfTrainer::new(&resumed, cfg).unwrap();
        t2.restore_opt_entries(&map).unwrap();
        assert_eq!(t2.step, 10);
        t2.run(&mut resumed, &datasets, 10).unwrap();

        assert_eq!(resumed.checksum(), straight.checksum());
    }

    #[test]
    fn disabled_terms_are_excluded() {
        let (family, datasets) = tiny_datasets(41);
        let mut net =
            SfNetwork::new(family.state_dim, family.action_dim, 4, &[8], family.gamma, 41)
                .unwrap();
        let cfg = SfTrainConfig {
            steps: 3,
            batch_per_task: 4,
            mmd_samples: 2,
            use_recon: false,
            use_mmd: false,
            log_every: 1,
            seed: 41,
            ..SfTrainConfig::default()
        };
        let curves = train_sf(&mut net, &datasets, &cfg).unwrap();
        for row in &curves {
            assert_eq!(row.l_recon, 0.0);
            assert_eq!(row.l_mmd, 0.0);
            let combined = row.l_reward + row.l_td;
            assert!((row.l_total - combined).abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_term_with_single_task_is_rejected() {
        let (family, datasets) = tiny_datasets(43);
        let mut net =
            SfNetwork::new(family.state_dim, family.action_dim, 4, &[8], family.gamma, 43)
                .unwrap();
        let cfg = SfTrainConfig { steps: 1, seed: 43, ..SfTrainConfig::default() };
        assert!(train_sf(&mut net, &datasets[..1], &cfg).is_err());
    }
}
