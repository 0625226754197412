//! End-to-end orchestration: the three training stages, test-time adaptation
//! on a held-out task, and normalized evaluation.

use alloc::vec::Vec;

use crate::context::{window_from_episode, ContextEncoder, ContextSource};
use crate::envs::{EnvFamily, TaskSpec, Transition};
use crate::error::{Error, Result};
use crate::expert::{self, CollectConfig, TaskDataset};
use crate::policy::{train_policy, ContextPolicy, PolicyCurveRow, PolicyTrainConfig};
use crate::rng;
use crate::sfnet::{train_sf, SfCurveRow, SfNetwork, SfTrainConfig};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub family: EnvFamily,
    pub n_tasks: usize,
    pub seed: u64,
    pub data: CollectConfig,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub z_dim: usize,
    pub policy_hidden: Vec<usize>,
    pub context_source: ContextSource,
    pub sf: SfTrainConfig,
    pub policy: PolicyTrainConfig,
}

impl PipelineConfig {
    pub fn new(family: EnvFamily) -> Self {
        PipelineConfig {
            family,
            n_tasks: 4,
            seed: 0,
            data: CollectConfig::default(),
            feature_dim: 8,
            hidden: alloc::vec![32, 32],
            z_dim: 8,
            policy_hidden: alloc::vec![32, 32],
            context_source: ContextSource::SfFeatures,
            sf: SfTrainConfig::default(),
            policy: PolicyTrainConfig::default(),
        }
    }
}

pub struct PipelineArtifacts {
    pub family: EnvFamily,
    pub tasks: Vec<TaskSpec>,
    pub datasets: Vec<TaskDataset>,
    /// Trained SF network; None when contexts come from raw transitions.
    pub net: Option<SfNetwork>,
    pub encoder: ContextEncoder,
    pub policy: ContextPolicy,
    pub sf_curves: Vec<SfCurveRow>,
    pub policy_curves: Vec<PolicyCurveRow>,
}

/// Run all three stages: expert data collection, SF training (skipped for
/// the raw-transition context source), and joint policy/encoder training.
pub fn run_training_pipeline(cfg: &PipelineConfig) -> Result<PipelineArtifacts> {
    let family = cfg.family.clone();
    family.validate()?;
    let tasks = family.sample_tasks(cfg.n_tasks, cfg.seed)?;
    let datasets: Vec<TaskDataset> = tasks
        .iter()
        .map(|t| expert::collect_expert(&family, t, &cfg.data, cfg.seed))
        .collect::<Result<_>>()?;

    let (net, sf_curves) = match cfg.context_source {
        ContextSource::SfFeatures => {
            let mut net = SfNetwork::new(
                family.state_dim,
                family.action_dim,
                cfg.feature_dim,
                &cfg.hidden,
                family.gamma,
                rng::derive(cfg.seed, "pipeline.sf"),
            )?;
            let curves = train_sf(&mut net, &datasets, &cfg.sf)?;
            (Some(net), curves)
        }
        ContextSource::RawTransitions => (None, Vec::new()),
    };

    let input_dim =
        cfg.context_source.input_dim(family.state_dim, family.action_dim, cfg.feature_dim);
    let mut encoder = ContextEncoder::new(
        cfg.context_source,
        input_dim,
        cfg.z_dim,
        rng::derive(cfg.seed, "pipeline.encoder"),
    )?;
    let mut policy = ContextPolicy::new(
        family.state_dim,
        cfg.z_dim,
        family.action_dim,
        &cfg.policy_hidden,
        family.action_bound,
        rng::derive(cfg.seed, "pipeline.policy"),
    )?;

    let sf_checksum = net.as_ref().map(|n| n.checksum());
    let policy_curves =
        train_policy(&mut policy, &mut encoder, net.as_ref(), &datasets, &cfg.policy)?;
    if let (Some(before), Some(n)) = (sf_checksum, net.as_ref()) {
        if n.checksum() != before {
            return Err(Error::state("SF network changed during stage 3"));
        }
    }

    Ok(PipelineArtifacts {
        family,
        tasks,
        datasets,
        net,
        encoder,
        policy,
        sf_curves,
        policy_curves,
    })
}

/// One policy episode conditioned on a fixed context, returning the
/// transitions and the total reward.
pub fn rollout(
    family: &EnvFamily,
    task: &TaskSpec,
    policy: &ContextPolicy,
    z: &[f64],
    seed: u64,
    episode_tag: u64,
) -> Result<(Vec<Transition>, f64)> {
    let mut stream = rng::tagged_stream(seed, &[rng::fnv1a64(b"rollout"), episode_tag]);
    let mut state = family.initial_state(&mut stream);
    let mut transitions = Vec::with_capacity(family.horizon);
    let mut total = 0.0;
    for step_index in 0..family.horizon {
        let action = policy.act(&state, z)?;
        let step = family.step(task, &state, &action, step_index)?;
        total += step.reward;
        transitions.push(Transition {
            state: state.clone(),
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done: step.done,
            task_id: task.task_id,
        });
        state = step.next_state;
        if step.done {
            break;
        }
    }
    Ok((transitions, total))
}

/// Per-episode undiscounted returns of the context-conditioned policy.
pub fn evaluate(
    family: &EnvFamily,
    task: &TaskSpec,
    policy: &ContextPolicy,
    z: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::argument("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let (_, r) = rollout(family, task, policy, z, seed, 1000 + e as u64)?;
        returns.push(r);
    }
    Ok(returns)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    libm::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
}

fn mean_return_of<P: FnMut(&[f64]) -> Result<Vec<f64>>>(
    family: &EnvFamily,
    task: &TaskSpec,
    mut policy: P,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..episodes {
        let mut stream = rng::tagged_stream(seed, &[rng::fnv1a64(b"rollout"), 1000 + e as u64]);
        let mut state = family.initial_state(&mut stream);
        for step_index in 0..family.horizon {
            let action = policy(&state)?;
            let step = family.step(task, &state, &action, step_index)?;
            total += step.reward;
            state = step.next_state;
            if step.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// (expert mean return, zero-action mean return) over the same initial
/// states as `evaluate`.
pub fn baseline_returns(
    family: &EnvFamily,
    task: &TaskSpec,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let fam = family.clone();
    let expert_return =
        mean_return_of(family, task, |s| fam.expert_action(task, s), episodes, seed)?;
    let ad = family.action_dim;
    let zero_return =
        mean_return_of(family, task, |_s| Ok(alloc::vec![0.0; ad]), episodes, seed)?;
    Ok((expert_return, zero_return))
}

/// Mean return rescaled so the expert baseline scores 1 and the random
/// (here: zero-action) baseline scores 0.
pub fn normalized_score(returns: &[f64], expert_return: f64, random_return: f64) -> Result<f64> {
    if !(expert_return > random_return) {
        return Err(Error::argument(
            "normalization needs expert return above the random baseline",
        ));
    }
    Ok((mean(returns) - random_return) / (expert_return - random_return))
}

#[derive(Debug, Clone)]
pub struct AdaptConfig {
    /// Maximum context window length, both for candidates and re-encoding.
    pub context_len: usize,
    /// Exploration episodes per candidate; selection uses the mean return.
    pub candidate_episodes: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig { context_len: 64, candidate_episodes: 1, eval_episodes: 10, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptationResult {
    /// Exploration return per training-task candidate context.
    pub candidate_returns: Vec<f64>,
    /// Index (into the training tasks) of the winning candidate.
    pub chosen_k: usize,
    /// Context re-encoded from the winning exploration trajectory.
    pub z_prime: Vec<f64>,
    /// Per-episode returns of the adapted policy.
    pub eval_returns: Vec<f64>,
    pub normalized_score: f64,
}

/// Candidate context for training task k: encode the trailing window of the
/// first episode in its dataset.
pub fn candidate_context(
    encoder: &ContextEncoder,
    net: Option<&SfNetwork>,
    ds: &TaskDataset,
    context_len: usize,
) -> Result<Vec<f64>> {
    let (start, end) = *ds
        .episodes
        .first()
        .ok_or_else(|| Error::argument("dataset has no episodes"))?;
    let slice = &ds.transitions[start..end];
    let window = window_from_episode(slice, slice.len(), context_len)?;
    encoder.encode(net, &window)
}

/// Test-time adaptation on a held-out task.
///
/// Each training task contributes one candidate context. The policy rolls
/// out once per candidate on the test task; the highest-return trajectory
/// (ties break toward the lowest index) is re-encoded into the adapted
/// context, which is then evaluated.
pub fn adapt(
    family: &EnvFamily,
    test_task: &TaskSpec,
    policy: &ContextPolicy,
    encoder: &ContextEncoder,
    net: Option<&SfNetwork>,
    train_datasets: &[TaskDataset],
    cfg: &AdaptConfig,
) -> Result<AdaptationResult> {
    if train_datasets.is_empty() {
        return Err(Error::argument("adaptation needs training datasets"));
    }
    if cfg.candidate_episodes == 0 {
        return Err(Error::argument("candidate_episodes must be positive"));
    }
    if test_task.family != family.family {
        return Err(Error::argument("test task family does not match the environment"));
    }
    let mut candidate_returns = Vec::with_capacity(train_datasets.len());
    let mut best: Option<(usize, f64, Vec<Transition>)> = None;
    for (k, ds) in train_datasets.iter().enumerate() {
        let z_k = candidate_context(encoder, net, ds, cfg.context_len)?;
        // Episode tags are shared across candidates, so every z_k explores
        // from the same initial states.
        let mut best_traj: Option<(f64, Vec<Transition>)> = None;
        let mut total = 0.0;
        for e in 0..cfg.candidate_episodes {
            let (traj, ret) = rollout(family, test_task, policy, &z_k, cfg.seed, e as u64)?;
            total += ret;
            if best_traj.as_ref().map_or(true, |(r, _)| ret > *r) {
                best_traj = Some((ret, traj));
            }
        }
        let mean_ret = total / cfg.candidate_episodes as f64;
        candidate_returns.push(mean_ret);
        let better = best.as_ref().map_or(true, |(_, r, _)| mean_ret > *r);
        if better {
            best = Some((k, mean_ret, best_traj.unwrap().1));
        }
    }
    let (chosen_k, _, traj) = best.unwrap();

    let window = window_from_episode(&traj, traj.len(), cfg.context_len)?;
    let z_prime = encoder.encode(net, &window)?;

    let eval_returns =
        evaluate(family, test_task, policy, &z_prime, cfg.eval_episodes, cfg.seed)?;
    let (expert_return, zero_return) =
        baseline_returns(family, test_task, cfg.eval_episodes, cfg.seed)?;
    let normalized_score = normalized_score(&eval_returns, expert_return, zero_return)?;
    Ok(AdaptationResult { candidate_returns, chosen_k, z_prime, eval_returns, normalized_score })
}
