//! Minimal TD3-style single-task learner: twin critics, clipped-noise target
//! smoothing, delayed actor updates, soft target updates. Optional stage-1
//! data source behind a config switch; analytic experts are the default.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffkit::{Activation, AdamState, Mlp, Tape};
use crate::envs::{EnvFamily, TaskSpec, Transition};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct Td3Config {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub explore_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub training_steps: usize,
    /// Steps of uniform-random action warmup before learning starts.
    pub warmup_steps: usize,
    pub lr: f64,
    pub eval_every: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            actor_hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            explore_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            tau: 0.01,
            batch_size: 64,
            replay_capacity: 50_000,
            training_steps: 10_000,
            warmup_steps: 500,
            lr: 1e-3,
            eval_every: 500,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if self.policy_delay < 1 {
            return Err(Error::argument("policy_delay must be >= 1"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::argument("tau must lie in (0, 1]"));
        }
        if self.explore_noise < 0.0 || self.target_noise < 0.0 {
            return Err(Error::argument("noise levels must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Td3Report {
    /// (training step, greedy-actor episode return).
    pub return_curve: Vec<(usize, f64)>,
    /// Critic TD loss per learning step.
    pub critic_loss: Vec<f64>,
}

/// Greedy deterministic policy wrapper around the trained actor.
#[derive(Debug, Clone)]
pub struct Td3Actor {
    pub net: Mlp,
    pub action_bound: f64,
}

impl Td3Actor {
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.eval(state)?;
        Ok(out.iter().map(|v| v * self.action_bound).collect())
    }
}

fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) {
    for (name, e) in target.params.iter_mut() {
        let src = &source.params.get(name).unwrap().values;
        for (t, s) in e.values.iter_mut().zip(src) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }
}

fn greedy_episode_return(
    family: &EnvFamily,
    task: &TaskSpec,
    actor: &Td3Actor,
    seed: u64,
) -> Result<f64> {
    let mut stream = rng::tagged_stream(seed, &[task.task_id as u64, u64::MAX]);
    let mut state = family.initial_state(&mut stream);
    let mut total = 0.0;
    for step_index in 0..family.horizon {
        let action = actor.act(&state)?;
        let step = family.step(task, &state, &action, step_index)?;
        total += step.reward;
        state = step.next_state;
        if step.done {
            break;
        }
    }
    Ok(total)
}

/// Train a deterministic policy on one task with TD3-style updates.
pub fn train_single_task(
    family: &EnvFamily,
    task: &TaskSpec,
    cfg: &Td3Config,
    seed: u64,
) -> Result<(Td3Actor, Td3Report)> {
    cfg.validate()?;
    let (sd, ad) = (family.state_dim, family.action_dim);
    let mut actor_dims = vec![sd];
    actor_dims.extend_from_slice(&cfg.actor_hidden);
    actor_dims.push(ad);
    let mut critic_dims = vec![sd + ad];
    critic_dims.extend_from_slice(&cfg.critic_hidden);
    critic_dims.push(1);

    let mut actor = Mlp::new(&actor_dims, Activation::Relu, Activation::Tanh, rng::derive(seed, "actor"))?;
    let mut actor_target = actor.clone();
    let mut critics = [
        Mlp::new(&critic_dims, Activation::Relu, Activation::Identity, rng::derive(seed, "critic0"))?,
        Mlp::new(&critic_dims, Activation::Relu, Activation::Identity, rng::derive(seed, "critic1"))?,
    ];
    let mut critic_targets = [critics[0].clone(), critics[1].clone()];
    let mut actor_opt = AdamState::with_lr(&actor.params, cfg.lr);
    let mut critic_opts = [
        AdamState::with_lr(&critics[0].params, cfg.lr),
        AdamState::with_lr(&critics[1].params, cfg.lr),
    ];

    let mut replay: Vec<Transition> = Vec::with_capacity(cfg.replay_capacity.min(1 << 16));
    let mut replay_cursor = 0usize;
    let mut stream = rng::named_stream(seed, "td3-train");
    let normal = Normal::new(0.0, 1.0).map_err(|_| Error::argument("bad normal"))?;

    let mut report = Td3Report { return_curve: Vec::new(), critic_loss: Vec::new() };
    let mut state = family.initial_state(&mut stream);
    let mut step_index = 0usize;

    for step in 0..cfg.training_steps {
        // Interact.
        let action: Vec<f64> = if step < cfg.warmup_steps {
            (0..ad).map(|_| stream.gen_range(-family.action_bound..family.action_bound)).collect()
        } else {
            let mut a = actor.eval(&state)?;
            for v in a.iter_mut() {
                let noisy = *v * family.action_bound
                    + cfg.explore_noise * normal.sample(&mut stream);
                *v = noisy.max(-family.action_bound).min(family.action_bound);
            }
            a
        };
        let env_step = family.step(task, &state, &action, step_index)?;
        let tr = Transition {
            state: state.clone(),
            action,
            reward: env_step.reward,
            next_state: env_step.next_state.clone(),
            done: env_step.done,
            task_id: task.task_id,
        };
        if replay.len() < cfg.replay_capacity {
            replay.push(tr);
        } else {
            replay[replay_cursor] = tr;
            replay_cursor = (replay_cursor + 1) % cfg.replay_capacity;
        }
        if env_step.done {
            state = family.initial_state(&mut stream);
            step_index = 0;
        } else {
            state = env_step.next_state;
            step_index += 1;
        }

        if step < cfg.warmup_steps || replay.len() < cfg.batch_size {
            continue;
        }

        // Critic update on a uniform minibatch.
        let batch: Vec<usize> =
            (0..cfg.batch_size).map(|_| stream.gen_range(0..replay.len())).collect();
        let mut targets = Vec::with_capacity(batch.len());
        for &i in &batch {
            let t = &replay[i];
            let mut next_action = actor_target.eval(&t.next_state)?;
            for v in next_action.iter_mut() {
                let eps = (cfg.target_noise * normal.sample(&mut stream))
                    .max(-cfg.noise_clip)
                    .min(cfg.noise_clip);
                *v = (*v * family.action_bound + eps)
                    .max(-family.action_bound)
                    .min(family.action_bound);
            }
            let mut input = t.next_state.clone();
            input.extend_from_slice(&next_action);
            let q1 = critic_targets[0].eval(&input)?[0];
            let q2 = critic_targets[1].eval(&input)?[0];
            // Time-limit termination bootstraps; the horizon is artificial.
            targets.push(t.reward + family.gamma * q1.min(q2));
        }
        let mut step_loss = 0.0;
        for c in 0..2 {
            let mut tape = Tape::new();
            let set = tape.register_set();
            let mut losses = Vec::with_capacity(batch.len());
            for (bi, &i) in batch.iter().enumerate() {
                let t = &replay[i];
                let mut input = t.state.clone();
                input.extend_from_slice(&t.action);
                let x = tape.constant(&input);
                let q = critics[c].forward(&mut tape, set, x)?;
                let y = tape.constant(&[targets[bi]]);
                losses.push(tape.mse(q, y)?);
            }
            let loss = tape.mean_of(&losses)?;
            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::numeric(alloc::format!(
                    "non-finite critic loss at step {step}"
                )));
            }
            step_loss += 0.5 * loss_value;
            tape.backward(loss, &mut [&mut critics[c].params])?;
            critic_opts[c].step(&mut critics[c].params)?;
        }
        report.critic_loss.push(step_loss);

        // Delayed actor update: maximize Q1(s, pi(s)).
        if step % cfg.policy_delay == 0 {
            let mut tape = Tape::new();
            let actor_set = tape.register_set();
            let critic_set = tape.register_set();
            let mut objectives = Vec::with_capacity(batch.len());
            for &i in &batch {
                let t = &replay[i];
                let s = tape.constant(&t.state);
                let a_raw = actor.forward(&mut tape, actor_set, s)?;
                let a = tape.scale(a_raw, family.action_bound);
                let sa = tape.concat(s, a);
                let q = critics[0].forward(&mut tape, critic_set, sa)?;
                objectives.push(q);
            }
            let mean_q = tape.mean_of(&objectives)?;
            let loss = tape.scale(mean_q, -1.0);
            // The critic set participates in the tape but its gradients are
            // discarded: only the actor is updated here.
            tape.backward(loss, &mut [&mut actor.params, &mut critics[0].params])?;
            critics[0].params.zero_grads();
            actor_opt.step(&mut actor.params)?;

            soft_update(&mut actor_target, &actor, cfg.tau);
            soft_update(&mut critic_targets[0], &critics[0], cfg.tau);
            soft_update(&mut critic_targets[1], &critics[1], cfg.tau);
        }

        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let greedy = Td3Actor { net: actor.clone(), action_bound: family.action_bound };
            report
                .return_curve
                .push((step + 1, greedy_episode_return(family, task, &greedy, seed)?));
        }
    }

    Ok((Td3Actor { net: actor, action_bound: family.action_bound }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::checkpoint;
    use crate::envs::Family;

    #[test]
    fn zero_training_steps_leaves_actor_at_initialization() {
        let family = EnvFamily::point_fwd_back();
        let task = TaskSpec { family: Family::PointFwdBack, task_params: vec![1.0], task_id: 0 };
        let cfg = Td3Config { training_steps: 0, ..Td3Config::default() };
        let (actor, _) = train_single_task(&family, &task, &cfg, 9).unwrap();
        let fresh = Mlp::new(
            &[2, 32, 32, 1],
            Activation::Relu,
            Activation::Tanh,
            rng::derive(9, "actor"),
        )
        .unwrap();
        let a = checkpoint::encode(&[("actor", &actor.net.params)], &[]);
        let b = checkpoint::encode(&[("actor", &fresh.params)], &[]);
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = Td3Config::default();
        cfg.policy_delay = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = Td3Config::default();
        cfg.tau = 1.5;
        assert!(cfg.validate().is_err());
    }
}
