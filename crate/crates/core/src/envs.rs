//! Multi-task point-mass environment families sharing dynamics but differing
//! only in reward, plus analytic expert policies and a tabular test MDP.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write as _;

use rand::Rng;

use crate::diffkit::checkpoint::fmt_f64;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    PointGoal,
    PointVel,
    PointFwdBack,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::PointGoal => "point_goal",
            Family::PointVel => "point_vel",
            Family::PointFwdBack => "point_fwd_back",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "point_goal" => Ok(Family::PointGoal),
            "point_vel" => Ok(Family::PointVel),
            "point_fwd_back" => Ok(Family::PointFwdBack),
            other => Err(Error::argument(alloc::format!("unknown family '{other}'"))),
        }
    }
}

/// A reward-parameterizing task drawn from a family.
///
/// `task_params` holds goal coordinates (point_goal), the target velocity
/// (point_vel), or a direction of +1/-1 (point_fwd_back).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub family: Family,
    pub task_params: Vec<f64>,
    pub task_id: usize,
}

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub task_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Shared dynamics and task-sampler configuration for one family.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvFamily {
    pub family: Family,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub dt: f64,
    pub action_bound: f64,
    pub state_bound: f64,
    /// Velocity clip for the 1-D families.
    pub vel_bound: f64,
    /// Goal circle radius (point_goal).
    pub goal_radius: f64,
    /// Target-velocity range (point_vel).
    pub vel_range: (f64, f64),
    /// Additive uniform transition noise amplitude; 0 disables it.
    pub noise: f64,
    /// Initial states are uniform in a box of this half-width around origin.
    pub init_box: f64,
}

fn clip(x: f64, bound: f64) -> f64 {
    x.max(-bound).min(bound)
}

impl EnvFamily {
    pub fn point_goal() -> Self {
        EnvFamily {
            family: Family::PointGoal,
            state_dim: 2,
            action_dim: 2,
            horizon: 64,
            gamma: 0.99,
            dt: 0.1,
            action_bound: 1.0,
            state_bound: 2.0,
            vel_bound: 1.0,
            goal_radius: 1.0,
            vel_range: (-1.0, 1.0),
            noise: 0.0,
            init_box: 0.25,
        }
    }

    pub fn point_vel() -> Self {
        EnvFamily {
            family: Family::PointVel,
            state_dim: 2,
            action_dim: 1,
            horizon: 64,
            gamma: 0.99,
            dt: 0.1,
            action_bound: 1.0,
            state_bound: 10.0,
            vel_bound: 1.0,
            goal_radius: 1.0,
            vel_range: (-1.0, 1.0),
            noise: 0.0,
            init_box: 0.25,
        }
    }

    pub fn point_fwd_back() -> Self {
        EnvFamily { family: Family::PointFwdBack, ..Self::point_vel() }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::PointGoal => Self::point_goal(),
            Family::PointVel => Self::point_vel(),
            Family::PointFwdBack => Self::point_fwd_back(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::argument("gamma must lie in (0, 1)"));
        }
        if self.horizon < 1 {
            return Err(Error::argument("horizon must be >= 1"));
        }
        if self.action_bound <= 0.0 {
            return Err(Error::argument("action bound must be positive"));
        }
        Ok(())
    }

    fn task_from_angle(&self, angle: f64, task_id: usize) -> TaskSpec {
        TaskSpec {
            family: self.family,
            task_params: vec![
                self.goal_radius * libm::cos(angle),
                self.goal_radius * libm::sin(angle),
            ],
            task_id,
        }
    }

    /// Draw `count` tasks uniformly from the family's parameter space.
    pub fn sample_tasks(&self, count: usize, seed: u64) -> Result<Vec<TaskSpec>> {
        if count < 1 {
            return Err(Error::argument("task count must be >= 1"));
        }
        let mut stream = rng::named_stream(seed, "task-sampler");
        let mut tasks = Vec::with_capacity(count);
        for task_id in 0..count {
            let task = match self.family {
                Family::PointGoal => {
                    let angle = stream.gen_range(0.0..2.0 * PI);
                    self.task_from_angle(angle, task_id)
                }
                Family::PointVel => {
                    let (lo, hi) = self.vel_range;
                    let v = stream.gen_range(lo..hi);
                    TaskSpec { family: self.family, task_params: vec![v], task_id }
                }
                Family::PointFwdBack => {
                    // Exhaustive two-element family: alternate directions so
                    // K = 2 always covers {+1, -1}.
                    let dir = if count == 2 {
                        if task_id == 0 { 1.0 } else { -1.0 }
                    } else if stream.gen_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    };
                    TaskSpec { family: self.family, task_params: vec![dir], task_id }
                }
            };
            tasks.push(task);
        }
        Ok(tasks)
    }

    /// Evenly spaced point_goal tasks (training grids and rotated holdouts).
    pub fn goal_tasks_at_angles(&self, angles: &[f64]) -> Vec<TaskSpec> {
        angles
            .iter()
            .enumerate()
            .map(|(i, &a)| self.task_from_angle(a, i))
            .collect()
    }

    pub fn initial_state(&self, stream: &mut impl Rng) -> Vec<f64> {
        match self.family {
            Family::PointGoal => {
                vec![
                    stream.gen_range(-self.init_box..self.init_box),
                    stream.gen_range(-self.init_box..self.init_box),
                ]
            }
            Family::PointVel | Family::PointFwdBack => {
                vec![stream.gen_range(-self.init_box..self.init_box), 0.0]
            }
        }
    }

    fn check_finite(&self, state: &[f64], action: &[f64]) -> Result<()> {
        if state.iter().chain(action).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite state or action".to_string()));
        }
        Ok(())
    }

    /// Task-independent deterministic dynamics.
    pub fn dynamics(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::dimension(alloc::format!(
                "state length {} != {}",
                state.len(),
                self.state_dim
            )));
        }
        if action.len() != self.action_dim {
            return Err(Error::dimension(alloc::format!(
                "action length {} != {}",
                action.len(),
                self.action_dim
            )));
        }
        self.check_finite(state, action)?;
        let a: Vec<f64> = action.iter().map(|&v| clip(v, self.action_bound)).collect();
        Ok(match self.family {
            Family::PointGoal => {
                vec![
                    clip(state[0] + self.dt * a[0], self.state_bound),
                    clip(state[1] + self.dt * a[1], self.state_bound),
                ]
            }
            Family::PointVel | Family::PointFwdBack => {
                vec![
                    clip(state[0] + self.dt * state[1], self.state_bound),
                    clip(state[1] + self.dt * a[0], self.vel_bound),
                ]
            }
        })
    }

    /// Task-dependent reward of arriving in `next_state`.
    pub fn reward(&self, task: &TaskSpec, next_state: &[f64]) -> f64 {
        match self.family {
            Family::PointGoal => {
                let dx = next_state[0] - task.task_params[0];
                let dy = next_state[1] - task.task_params[1];
                -libm::sqrt(dx * dx + dy * dy)
            }
            Family::PointVel => -(next_state[1] - task.task_params[0]).abs(),
            Family::PointFwdBack => task.task_params[0] * next_state[1],
        }
    }

    /// One deterministic step; `done` iff `step_index + 1` reaches the horizon.
    pub fn step(
        &self,
        task: &TaskSpec,
        state: &[f64],
        action: &[f64],
        step_index: usize,
    ) -> Result<Step> {
        let next_state = self.dynamics(state, action)?;
        let reward = self.reward(task, &next_state);
        Ok(Step { next_state, reward, done: step_index + 1 >= self.horizon })
    }

    /// Analytic expert: max-speed unit vector toward the goal (point_goal),
    /// saturated acceleration toward the target velocity (point_vel), or in
    /// the task direction (point_fwd_back).
    pub fn expert_action(&self, task: &TaskSpec, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::dimension(alloc::format!(
                "state length {} != {}",
                state.len(),
                self.state_dim
            )));
        }
        Ok(match self.family {
            Family::PointGoal => {
                let dx = task.task_params[0] - state[0];
                let dy = task.task_params[1] - state[1];
                let dist = libm::sqrt(dx * dx + dy * dy);
                if dist == 0.0 {
                    vec![0.0, 0.0]
                } else {
                    vec![self.action_bound * dx / dist, self.action_bound * dy / dist]
                }
            }
            Family::PointVel => {
                let dv = task.task_params[0] - state[1];
                vec![clip(dv / self.dt, self.action_bound)]
            }
            Family::PointFwdBack => vec![task.task_params[0] * self.action_bound],
        })
    }

    /// Upper bound on |r| over the reachable state space.
    pub fn reward_bound(&self) -> f64 {
        match self.family {
            Family::PointGoal => {
                libm::sqrt(2.0) * self.state_bound + self.goal_radius
            }
            Family::PointVel => {
                let (lo, hi) = self.vel_range;
                self.vel_bound + lo.abs().max(hi.abs())
            }
            Family::PointFwdBack => self.vel_bound,
        }
    }

    /// Task manifest: family header plus one `task_id, params...` line per task.
    pub fn manifest(&self, tasks: &[TaskSpec]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "family {}", self.family.name());
        let _ = writeln!(out, "state_dim {}", self.state_dim);
        let _ = writeln!(out, "action_dim {}", self.action_dim);
        let _ = writeln!(out, "horizon {}", self.horizon);
        let _ = writeln!(out, "gamma {}", fmt_f64(self.gamma));
        let _ = writeln!(out, "dt {}", fmt_f64(self.dt));
        let _ = writeln!(out, "action_bound {}", fmt_f64(self.action_bound));
        let _ = writeln!(out, "state_bound {}", fmt_f64(self.state_bound));
        let _ = writeln!(out, "tasks {}", tasks.len());
        for t in tasks {
            let _ = write!(out, "{}", t.task_id);
            for p in &t.task_params {
                let _ = write!(out, " {}", fmt_f64(*p));
            }
            out.push('\n');
        }
        out
    }

    /// Parse a manifest produced by [`EnvFamily::manifest`]; returns the task
    /// list. Family fields are checked against `self`.
    pub fn parse_manifest(&self, text: &str) -> Result<Vec<TaskSpec>> {
        let mut tasks = Vec::new();
        let mut n_tasks: Option<usize> = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            match key {
                "family" => {
                    let name = parts.next().ok_or_else(|| Error::parse(ln + 1, "missing family"))?;
                    if Family::parse(name)? != self.family {
                        return Err(Error::parse(ln + 1, alloc::format!("family mismatch: {name}")));
                    }
                }
                "state_dim" | "action_dim" | "horizon" | "gamma" | "dt" | "action_bound"
                | "state_bound" => {}
                "tasks" => {
                    let n = parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| Error::parse(ln + 1, "bad task count"))?;
                    n_tasks = Some(n);
                }
                id => {
                    let task_id: usize = id
                        .parse()
                        .map_err(|_| Error::parse(ln + 1, alloc::format!("bad task line '{line}'")))?;
                    let mut params = Vec::new();
                    for p in parts {
                        let v: f64 = p
                            .parse()
                            .map_err(|_| Error::parse(ln + 1, alloc::format!("bad param '{p}'")))?;
                        params.push(v);
                    }
                    tasks.push(TaskSpec { family: self.family, task_params: params, task_id });
                }
            }
        }
        match n_tasks {
            Some(n) if n == tasks.len() => Ok(tasks),
            Some(n) => Err(Error::parse(
                0,
                alloc::format!("manifest declares {n} tasks but lists {}", tasks.len()),
            )),
            None => Err(Error::parse(0, "manifest missing 'tasks' line")),
        }
    }
}

/// Small MDP with an explicit transition matrix for oracle tests.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    /// Row-stochastic transition matrix under a fixed policy, row-major.
    pub transition: Vec<f64>,
    /// Feature table, n_states x feature_dim, row-major.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        transition: Vec<f64>,
        features: Vec<f64>,
        feature_dim: usize,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp { n_states, transition, features, feature_dim, gamma };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Deterministic ring over `n` states with one-hot features.
    pub fn ring(n: usize, gamma: f64) -> Self {
        let mut transition = vec![0.0; n * n];
        let mut features = vec![0.0; n * n];
        for s in 0..n {
            transition[s * n + (s + 1) % n] = 1.0;
            features[s * n + s] = 1.0;
        }
        TabularMdp { n_states: n, transition, features, feature_dim: n, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if self.transition.len() != self.n_states * self.n_states {
            return Err(Error::dimension("transition matrix size".to_string()));
        }
        if self.features.len() != self.n_states * self.feature_dim {
            return Err(Error::dimension("feature table size".to_string()));
        }
        for s in 0..self.n_states {
            let row_sum: f64 =
                self.transition[s * self.n_states..(s + 1) * self.n_states].iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::argument(alloc::format!(
                    "transition row {s} sums to {row_sum}"
                )));
            }
        }
        Ok(())
    }

    /// Closed-form successor features: Psi = (I - gamma P)^{-1} Phi via a
    /// direct linear solve. Ground truth for TD-trained SF.
    pub fn sr_oracle(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_states;
        let d = self.feature_dim;
        // A = I - gamma P.
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = -self.gamma * self.transition[i * n + j];
            }
            a[i * n + i] += 1.0;
        }
        solve_multi(&mut a, n, self.features.clone(), d)
    }

    /// L-infinity residual of the Bellman identity Psi = Phi + gamma P Psi.
    pub fn bellman_residual(&self, psi: &[f64]) -> f64 {
        let (n, d) = (self.n_states, self.feature_dim);
        let mut worst = 0.0f64;
        for s in 0..n {
            for k in 0..d {
                let mut expect = self.features[s * d + k];
                for sp in 0..n {
                    expect += self.gamma * self.transition[s * n + sp] * psi[sp * d + k];
                }
                worst = worst.max((psi[s * d + k] - expect).abs());
            }
        }
        worst
    }
}

/// Gaussian elimination with partial pivoting for A X = B, with B holding `d`
/// right-hand sides as columns (row-major n x d). Consumes A.
fn solve_multi(a: &mut [f64], n: usize, mut b: Vec<f64>, d: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap()
            })
            .unwrap();
        if a[pivot_row * n + col].abs() < 1e-14 {
            return Err(Error::numeric("singular linear system".to_string()));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..d {
                b.swap(col * d + j, pivot_row * d + j);
            }
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            for j in 0..d {
                b[row * d + j] -= factor * b[col * d + j];
            }
        }
    }
    for col in (0..n).rev() {
        let pivot = a[col * n + col];
        for j in 0..d {
            let mut acc = b[col * d + j];
            for k in col + 1..n {
                acc -= a[col * n + k] * b[k * d + j];
            }
            b[col * d + j] = acc / pivot;
        }
    }
    Ok(b)
}
