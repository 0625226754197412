//! Stage 1: per-task transition datasets from analytic experts or a minimal
//! TD3-style learner, plus the CSV dataset format.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng;

use crate::diffkit::checkpoint::fmt_f64;
use crate::envs::{EnvFamily, TaskSpec, Transition};
use crate::error::{Error, Result};
use crate::rng;

/// Ordered transitions for one task with episode boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: TaskSpec,
    pub transitions: Vec<Transition>,
    /// Half-open index ranges partitioning `transitions`.
    pub episodes: Vec<(usize, usize)>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let mut cursor = 0;
        for &(start, end) in &self.episodes {
            if start != cursor || end <= start {
                return Err(Error::argument("episode ranges must partition the dataset"));
            }
            if end - start > horizon {
                return Err(Error::argument("episode longer than horizon"));
            }
            cursor = end;
        }
        if cursor != self.transitions.len() {
            return Err(Error::argument("episode ranges must cover the dataset"));
        }
        if self.transitions.iter().any(|t| t.task_id != self.task.task_id) {
            return Err(Error::argument("transition task_id mismatch"));
        }
        Ok(())
    }

    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|&(s, e)| self.transitions[s..e].iter().map(|t| t.reward).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CollectConfig {
    pub n_transitions: usize,
    /// Uniform action noise amplitude added to the policy output before
    /// clipping; gives behavior-cloning data some state coverage.
    pub action_noise: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig { n_transitions: 10_000, action_noise: 0.05 }
    }
}

/// Roll episodes from the family's initial-state distribution until
/// `n_transitions` are stored. Deterministic given the seed and a
/// deterministic policy.
pub fn collect<P>(
    family: &EnvFamily,
    task: &TaskSpec,
    mut policy: P,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<TaskDataset>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if cfg.n_transitions < 1 {
        return Err(Error::argument("n_transitions must be >= 1"));
    }
    let mut transitions = Vec::with_capacity(cfg.n_transitions);
    let mut episodes = Vec::new();
    let mut episode_index = 0u64;
    while transitions.len() < cfg.n_transitions {
        let mut stream =
            rng::tagged_stream(seed, &[task.task_id as u64, episode_index]);
        let mut state = family.initial_state(&mut stream);
        let start = transitions.len();
        for step_index in 0..family.horizon {
            let mut action = policy(&state)?;
            if action.len() != family.action_dim {
                return Err(Error::dimension(alloc::format!(
                    "policy output length {} != action dim {}",
                    action.len(),
                    family.action_dim
                )));
            }
            if cfg.action_noise > 0.0 {
                for a in action.iter_mut() {
                    *a += stream.gen_range(-cfg.action_noise..cfg.action_noise);
                }
            }
            let step = family.step(task, &state, &action, step_index)?;
            let mut next_state = step.next_state;
            let mut reward = step.reward;
            if family.noise > 0.0 {
                for v in next_state.iter_mut() {
                    *v += stream.gen_range(-family.noise..family.noise);
                }
                reward = family.reward(task, &next_state);
            }
            transitions.push(Transition {
                state: state.clone(),
                action,
                reward,
                next_state: next_state.clone(),
                done: step.done,
                task_id: task.task_id,
            });
            state = next_state;
            if step.done || transitions.len() == cfg.n_transitions {
                break;
            }
        }
        episodes.push((start, transitions.len()));
        episode_index += 1;
    }
    let ds = TaskDataset { task: task.clone(), transitions, episodes };
    ds.validate(family.horizon)?;
    Ok(ds)
}

/// Expert-policy convenience wrapper around [`collect`].
pub fn collect_expert(
    family: &EnvFamily,
    task: &TaskSpec,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<TaskDataset> {
    let fam = family.clone();
    let t = task.clone();
    collect(family, task, move |s| fam.expert_action(&t, s), cfg, seed)
}

// ── Dataset file format ──────────────────────────────────────────────

/// CSV with header `task_id,episode,step,s0..,a0..,r,sp0..,done`, one
/// transition per row; 17-significant-digit decimals round-trip bit-exactly.
pub fn encode_dataset(ds: &TaskDataset) -> String {
    let state_dim = ds.transitions.first().map_or(0, |t| t.state.len());
    let action_dim = ds.transitions.first().map_or(0, |t| t.action.len());
    let mut out = String::new();
    out.push_str("task_id,episode,step");
    for i in 0..state_dim {
        let _ = write!(out, ",s{i}");
    }
    for i in 0..action_dim {
        let _ = write!(out, ",a{i}");
    }
    out.push_str(",r");
    for i in 0..state_dim {
        let _ = write!(out, ",sp{i}");
    }
    out.push_str(",done\n");
    for (ep, &(start, end)) in ds.episodes.iter().enumerate() {
        for (step, t) in ds.transitions[start..end].iter().enumerate() {
            let _ = write!(out, "{},{ep},{step}", t.task_id);
            for v in &t.state {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            for v in &t.action {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            let _ = write!(out, ",{}", fmt_f64(t.reward));
            for v in &t.next_state {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            let _ = writeln!(out, ",{}", if t.done { 1 } else { 0 });
        }
    }
    out
}

/// Parse a dataset CSV; dimensions are recovered from the header. The task
/// spec is supplied by the caller (it lives in the manifest sidecar).
pub fn decode_dataset(text: &str, task: TaskSpec) -> Result<TaskDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty dataset file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let state_dim = cols.iter().filter(|c| c.starts_with('s') && !c.starts_with("sp")).count()
        - usize::from(cols.contains(&"step"));
    let action_dim = cols.iter().filter(|c| c.starts_with('a')).count();
    let expected_cols = 3 + 2 * state_dim + action_dim + 2;
    if cols.len() != expected_cols || cols[0] != "task_id" {
        return Err(Error::parse(1, alloc::format!("malformed header '{header}'")));
    }

    let mut transitions = Vec::new();
    let mut episodes: Vec<(usize, usize)> = Vec::new();
    let mut current_ep: Option<usize> = None;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(Error::parse(
                ln + 1,
                alloc::format!("expected {expected_cols} fields, got {}", fields.len()),
            ));
        }
        let parse_f = |idx: usize| -> Result<f64> {
            fields[idx]
                .parse()
                .map_err(|_| Error::parse(ln + 1, alloc::format!("bad value '{}'", fields[idx])))
        };
        let task_id: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(ln + 1, "bad task_id"))?;
        let ep: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(ln + 1, "bad episode index"))?;
        let mut idx = 3;
        let mut state = Vec::with_capacity(state_dim);
        for _ in 0..state_dim {
            state.push(parse_f(idx)?);
            idx += 1;
        }
        let mut action = Vec::with_capacity(action_dim);
        for _ in 0..action_dim {
            action.push(parse_f(idx)?);
            idx += 1;
        }
        let reward = parse_f(idx)?;
        idx += 1;
        let mut next_state = Vec::with_capacity(state_dim);
        for _ in 0..state_dim {
            next_state.push(parse_f(idx)?);
            idx += 1;
        }
        let done = match fields[idx] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(ln + 1, alloc::format!("bad done flag '{other}'"))),
        };
        if current_ep != Some(ep) {
            if ep != episodes.len() {
                return Err(Error::parse(ln + 1, "episode indices must be contiguous"));
            }
            episodes.push((transitions.len(), transitions.len()));
            current_ep = Some(ep);
        }
        transitions.push(Transition { state, action, reward, next_state, done, task_id });
        episodes.last_mut().unwrap().1 = transitions.len();
    }
    Ok(TaskDataset { task, transitions, episodes })
}
