//! Line-oriented run configuration: `section.key = value` pairs, `#`
//! comments, defaults merged in, unknown keys rejected. The resolved config
//! is written back into the output directory so a run can be reproduced
//! from that single file.

use anyhow::{anyhow, bail, Context, Result};

use sfc_core::context::ContextSource;
use sfc_core::envs::{EnvFamily, Family};
use sfc_core::expert::CollectConfig;
use sfc_core::mmd::{Bandwidth, KernelConfig, SeparationSign};
use sfc_core::policy::PolicyTrainConfig;
use sfc_core::sfnet::SfTrainConfig;
use sfc_core::td3::Td3Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Analytic,
    Td3,
}

impl DataSource {
    fn name(self) -> &'static str {
        match self {
            DataSource::Analytic => "analytic",
            DataSource::Td3 => "td3",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub run_name: String,

    pub env_family: Family,
    pub env_tasks: usize,
    pub env_horizon: usize,
    pub env_gamma: f64,
    pub env_dt: f64,
    pub env_action_bound: f64,
    pub env_noise: f64,

    pub data_transitions_per_task: usize,
    pub data_source: DataSource,
    pub data_action_noise: f64,

    pub td3_steps: Option<usize>,

    pub sf_feature_dim: usize,
    pub sf_hidden: Vec<usize>,
    pub sf_steps: usize,
    pub sf_batch_per_task: usize,
    pub sf_mmd_samples: usize,
    pub sf_lr: f64,
    pub sf_tau: f64,
    pub sf_use_reward: bool,
    pub sf_use_recon: bool,
    pub sf_use_td: bool,
    pub sf_use_mmd: bool,
    pub sf_w_reward: f64,
    pub sf_w_recon: f64,
    pub sf_w_td: f64,
    pub sf_w_mmd: f64,
    pub sf_freeze_phi: bool,
    pub sf_bootstrap_on_done: bool,

    pub context_len: usize,
    pub context_z_dim: usize,
    pub context_source: ContextSource,

    pub policy_hidden: Vec<usize>,
    pub policy_steps: usize,
    pub policy_batch_per_task: usize,
    pub policy_sep_windows: usize,
    pub policy_lr: f64,
    pub policy_use_mmd: bool,
    pub policy_w_bc: f64,
    pub policy_w_mmd: f64,

    pub mmd_bandwidth: Bandwidth,
    pub mmd_sign_stage3: SeparationSign,

    pub adapt_eval_episodes: usize,
    pub adapt_candidate_episodes: usize,
    pub adapt_test_tasks: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            run_name: "run".to_string(),
            env_family: Family::PointGoal,
            env_tasks: 4,
            env_horizon: 64,
            env_gamma: 0.99,
            env_dt: 0.1,
            env_action_bound: 1.0,
            env_noise: 0.0,
            data_transitions_per_task: 10_000,
            data_source: DataSource::Analytic,
            data_action_noise: 0.05,
            td3_steps: None,
            sf_feature_dim: 8,
            sf_hidden: vec![32, 32],
            sf_steps: 20_000,
            sf_batch_per_task: 64,
            sf_mmd_samples: 16,
            sf_lr: 1e-3,
            sf_tau: 0.01,
            sf_use_reward: true,
            sf_use_recon: true,
            sf_use_td: true,
            sf_use_mmd: true,
            sf_w_reward: 1.0,
            sf_w_recon: 1.0,
            sf_w_td: 1.0,
            sf_w_mmd: 1.0,
            sf_freeze_phi: false,
            sf_bootstrap_on_done: true,
            context_len: 64,
            context_z_dim: 8,
            context_source: ContextSource::SfFeatures,
            policy_hidden: vec![32, 32],
            policy_steps: 20_000,
            policy_batch_per_task: 16,
            policy_sep_windows: 4,
            policy_lr: 1e-3,
            policy_use_mmd: true,
            policy_w_bc: 1.0,
            policy_w_mmd: 1.0,
            mmd_bandwidth: Bandwidth::Median,
            mmd_sign_stage3: SeparationSign::Separate,
            adapt_eval_episodes: 10,
            adapt_candidate_episodes: 1,
            adapt_test_tasks: 5,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("config key {key}: expected true or false, got '{v}'"),
    }
}

fn parse_num<T: core::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("config key {key}: invalid value '{v}'"))
}

fn parse_dims(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect::<Result<Vec<usize>>>()
        .and_then(|dims| {
            if dims.is_empty() || dims.contains(&0) {
                bail!("config key {key}: layer dims must be positive");
            }
            Ok(dims)
        })
}

fn fmt_dims(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Apply one `section.key = value` assignment. Unknown keys error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "run_name" => {
                if v.is_empty() || !v.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                    bail!("config key run_name: must be nonempty [A-Za-z0-9_-]");
                }
                self.run_name = v.to_string();
            }
            "env.family" => self.env_family = Family::parse(v).map_err(|e| anyhow!("{e}"))?,
            "env.tasks" => self.env_tasks = parse_num(key, v)?,
            "env.horizon" => self.env_horizon = parse_num(key, v)?,
            "env.gamma" => self.env_gamma = parse_num(key, v)?,
            "env.dt" => self.env_dt = parse_num(key, v)?,
            "env.action_bound" => self.env_action_bound = parse_num(key, v)?,
            "env.noise" => self.env_noise = parse_num(key, v)?,
            "data.transitions_per_task" => self.data_transitions_per_task = parse_num(key, v)?,
            "data.source" => {
                self.data_source = match v {
                    "analytic" => DataSource::Analytic,
                    "td3" => DataSource::Td3,
                    _ => bail!("config key data.source: expected analytic or td3, got '{v}'"),
                }
            }
            "data.action_noise" => self.data_action_noise = parse_num(key, v)?,
            "td3.steps" => self.td3_steps = Some(parse_num(key, v)?),
            "sf.feature_dim" => self.sf_feature_dim = parse_num(key, v)?,
            "sf.hidden" => self.sf_hidden = parse_dims(key, v)?,
            "sf.steps" => self.sf_steps = parse_num(key, v)?,
            "sf.batch_per_task" => self.sf_batch_per_task = parse_num(key, v)?,
            "sf.mmd_samples" => self.sf_mmd_samples = parse_num(key, v)?,
            "sf.lr" => self.sf_lr = parse_num(key, v)?,
            "sf.tau" => self.sf_tau = parse_num(key, v)?,
            "sf.use_reward" => self.sf_use_reward = parse_bool(key, v)?,
            "sf.use_recon" => self.sf_use_recon = parse_bool(key, v)?,
            "sf.use_td" => self.sf_use_td = parse_bool(key, v)?,
            "sf.use_mmd" => self.sf_use_mmd = parse_bool(key, v)?,
            "sf.w_reward" => self.sf_w_reward = parse_num(key, v)?,
            "sf.w_recon" => self.sf_w_recon = parse_num(key, v)?,
            "sf.w_td" => self.sf_w_td = parse_num(key, v)?,
            "sf.w_mmd" => self.sf_w_mmd = parse_num(key, v)?,
            "sf.freeze_phi" => self.sf_freeze_phi = parse_bool(key, v)?,
            "sf.bootstrap_on_done" => self.sf_bootstrap_on_done = parse_bool(key, v)?,
            "context.len" => self.context_len = parse_num(key, v)?,
            "context.z_dim" => self.context_z_dim = parse_num(key, v)?,
            "context.source" => {
                self.context_source = ContextSource::parse(v).map_err(|e| anyhow!("{e}"))?
            }
            "policy.hidden" => self.policy_hidden = parse_dims(key, v)?,
            "policy.steps" => self.policy_steps = parse_num(key, v)?,
            "policy.batch_per_task" => self.policy_batch_per_task = parse_num(key, v)?,
            "policy.sep_windows" => self.policy_sep_windows = parse_num(key, v)?,
            "policy.lr" => self.policy_lr = parse_num(key, v)?,
            "policy.use_mmd" => self.policy_use_mmd = parse_bool(key, v)?,
            "policy.w_bc" => self.policy_w_bc = parse_num(key, v)?,
            "policy.w_mmd" => self.policy_w_mmd = parse_num(key, v)?,
            "mmd.bandwidth" => {
                self.mmd_bandwidth = if v == "median" {
                    Bandwidth::Median
                } else {
                    Bandwidth::Fixed(parse_num(key, v)?)
                }
            }
            "mmd.sign_stage3" => {
                self.mmd_sign_stage3 = match v {
                    "separate" => SeparationSign::Separate,
                    "attract" => SeparationSign::Attract,
                    _ => bail!("config key mmd.sign_stage3: expected separate or attract, got '{v}'"),
                }
            }
            "adapt.eval_episodes" => self.adapt_eval_episodes = parse_num(key, v)?,
            "adapt.candidate_episodes" => self.adapt_candidate_episodes = parse_num(key, v)?,
            "adapt.test_tasks" => self.adapt_test_tasks = parse_num(key, v)?,
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected 'key = value'", ln + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("config line {}", ln + 1))?;
        }
        Ok(())
    }

    /// `--override section.key=value` assignments.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override '{o}': expected section.key=value"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.env_tasks < 1 {
            bail!("env.tasks must be >= 1");
        }
        if self.data_source == DataSource::Td3 && self.td3_steps.is_none() {
            bail!("data.source = td3 requires td3.steps");
        }
        if self.data_transitions_per_task < 1 {
            bail!("data.transitions_per_task must be >= 1");
        }
        if self.context_len < 1 || self.context_z_dim < 1 {
            bail!("context.len and context.z_dim must be >= 1");
        }
        if self.sf_feature_dim < 1 {
            bail!("sf.feature_dim must be >= 1");
        }
        if self.adapt_eval_episodes < 1 || self.adapt_candidate_episodes < 1 {
            bail!("adapt episode counts must be >= 1");
        }
        self.family().validate().map_err(|e| anyhow!("{e}"))?;
        Ok(())
    }

    /// Full key set in emission order, with current values.
    pub fn resolved(&self) -> String {
        let b = |x: bool| if x { "true" } else { "false" };
        let bandwidth = match self.mmd_bandwidth {
            Bandwidth::Median => "median".to_string(),
            Bandwidth::Fixed(s) => format!("{s}"),
        };
        let sign = match self.mmd_sign_stage3 {
            SeparationSign::Separate => "separate",
            SeparationSign::Attract => "attract",
        };
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("run_name", self.run_name.clone());
        push("env.family", self.env_family.name().to_string());
        push("env.tasks", self.env_tasks.to_string());
        push("env.horizon", self.env_horizon.to_string());
        push("env.gamma", format!("{}", self.env_gamma));
        push("env.dt", format!("{}", self.env_dt));
        push("env.action_bound", format!("{}", self.env_action_bound));
        push("env.noise", format!("{}", self.env_noise));
        push("data.transitions_per_task", self.data_transitions_per_task.to_string());
        push("data.source", self.data_source.name().to_string());
        push("data.action_noise", format!("{}", self.data_action_noise));
        if let Some(s) = self.td3_steps {
            push("td3.steps", s.to_string());
        }
        push("sf.feature_dim", self.sf_feature_dim.to_string());
        push("sf.hidden", fmt_dims(&self.sf_hidden));
        push("sf.steps", self.sf_steps.to_string());
        push("sf.batch_per_task", self.sf_batch_per_task.to_string());
        push("sf.mmd_samples", self.sf_mmd_samples.to_string());
        push("sf.lr", format!("{}", self.sf_lr));
        push("sf.tau", format!("{}", self.sf_tau));
        push("sf.use_reward", b(self.sf_use_reward).to_string());
        push("sf.use_recon", b(self.sf_use_recon).to_string());
        push("sf.use_td", b(self.sf_use_td).to_string());
        push("sf.use_mmd", b(self.sf_use_mmd).to_string());
        push("sf.w_reward", format!("{}", self.sf_w_reward));
        push("sf.w_recon", format!("{}", self.sf_w_recon));
        push("sf.w_td", format!("{}", self.sf_w_td));
        push("sf.w_mmd", format!("{}", self.sf_w_mmd));
        push("sf.freeze_phi", b(self.sf_freeze_phi).to_string());
        push("sf.bootstrap_on_done", b(self.sf_bootstrap_on_done).to_string());
        push("context.len", self.context_len.to_string());
        push("context.z_dim", self.context_z_dim.to_string());
        push("context.source", self.context_source.name().to_string());
        push("policy.hidden", fmt_dims(&self.policy_hidden));
        push("policy.steps", self.policy_steps.to_string());
        push("policy.batch_per_task", self.policy_batch_per_task.to_string());
        push("policy.sep_windows", self.policy_sep_windows.to_string());
        push("policy.lr", format!("{}", self.policy_lr));
        push("policy.use_mmd", b(self.policy_use_mmd).to_string());
        push("policy.w_bc", format!("{}", self.policy_w_bc));
        push("policy.w_mmd", format!("{}", self.policy_w_mmd));
        push("mmd.bandwidth", bandwidth);
        push("mmd.sign_stage3", sign.to_string());
        push("adapt.eval_episodes", self.adapt_eval_episodes.to_string());
        push("adapt.candidate_episodes", self.adapt_candidate_episodes.to_string());
        push("adapt.test_tasks", self.adapt_test_tasks.to_string());
        out
    }

    // ── Core-config projections ──────────────────────────────────────

    pub fn family(&self) -> EnvFamily {
        let mut f = EnvFamily::for_family(self.env_family);
        f.horizon = self.env_horizon;
        f.gamma = self.env_gamma;
        f.dt = self.env_dt;
        f.action_bound = self.env_action_bound;
        f.noise = self.env_noise;
        f
    }

    pub fn kernel(&self) -> KernelConfig {
        KernelConfig { bandwidth: self.mmd_bandwidth }
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            n_transitions: self.data_transitions_per_task,
            action_noise: self.data_action_noise,
        }
    }

    pub fn td3_config(&self) -> Result<Td3Config> {
        let steps = self.td3_steps.ok_or_else(|| anyhow!("data.source = td3 requires td3.steps"))?;
        Ok(Td3Config { training_steps: steps, ..Td3Config::default() })
    }

    pub fn sf_train_config(&self) -> SfTrainConfig {
        SfTrainConfig {
            steps: self.sf_steps,
            batch_per_task: self.sf_batch_per_task,
            mmd_samples: self.sf_mmd_samples,
            lr: self.sf_lr,
            tau: self.sf_tau,
            use_reward: self.sf_use_reward,
            use_recon: self.sf_use_recon,
            use_td: self.sf_use_td,
            use_mmd: self.sf_use_mmd,
            w_reward: self.sf_w_reward,
            w_recon: self.sf_w_recon,
            w_td: self.sf_w_td,
            w_mmd: self.sf_w_mmd,
            freeze_phi: self.sf_freeze_phi,
            bootstrap_on_done: self.sf_bootstrap_on_done,
            kernel: self.kernel(),
            seed: self.seed,
            log_every: 10,
        }
    }

    pub fn policy_train_config(&self) -> PolicyTrainConfig {
        PolicyTrainConfig {
            steps: self.policy_steps,
            batch_per_task: self.policy_batch_per_task,
            context_len: self.context_len,
            sep_windows: self.policy_sep_windows,
            lr: self.policy_lr,
            w_bc: self.policy_w_bc,
            w_mmd: self.policy_w_mmd,
            use_mmd: self.policy_use_mmd,
            sign: self.mmd_sign_stage3,
            kernel: self.kernel(),
            seed: self.seed,
            log_every: 10,
        }
    }
}
