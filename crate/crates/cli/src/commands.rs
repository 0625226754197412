//! Subcommand implementations. Each command is a pure function of
//! (config, seed, output directory) to files under the run directory.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::Rng;

use sfc_core::context::{window_from_episode, ContextEncoder, ContextSource};
use sfc_core::diffkit::checkpoint;
use sfc_core::diffkit::{grad_check, Tape, DEFAULT_STEP};
use sfc_core::envs::{EnvFamily, TaskSpec};
use sfc_core::expert::{self, TaskDataset};
use sfc_core::meta::{self, AdaptConfig};
use sfc_core::policy::{self, ContextPolicy};
use sfc_core::rng;
use sfc_core::sfnet::{self, SfNetwork, SfSets, SfTrainer};
use sfc_core::td3;

use crate::config::{DataSource, RunConfig};
use crate::layout::{fmt_float, read_text, write_text, RunDir};

fn write_resolved_config(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    write_text(&dir.config_resolved(), &cfg.resolved())
}

// ── experts ──────────────────────────────────────────────────────────

pub fn experts(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    write_resolved_config(cfg, dir)?;
    let family = cfg.family();
    let tasks = family.sample_tasks(cfg.env_tasks, cfg.seed)?;
    write_text(&dir.manifest_path(), &family.manifest(&tasks))?;

    let collect_cfg = cfg.collect_config();
    for task in &tasks {
        let ds = match cfg.data_source {
            DataSource::Analytic => expert::collect_expert(&family, task, &collect_cfg, cfg.seed)?,
            DataSource::Td3 => {
                let td3_cfg = cfg.td3_config()?;
                let (actor, _) = td3::train_single_task(
                    &family,
                    task,
                    &td3_cfg,
                    rng::derive(cfg.seed, "td3") ^ task.task_id as u64,
                )?;
                expert::collect(&family, task, |s| actor.act(s), &collect_cfg, cfg.seed)?
            }
        };
        write_text(&dir.dataset_path(task.task_id), &expert::encode_dataset(&ds))?;
        println!(
            "task {}: {} transitions, {} episodes",
            task.task_id,
            ds.len(),
            ds.episodes.len()
        );
    }
    Ok(())
}

pub fn load_datasets(cfg: &RunConfig, dir: &RunDir) -> Result<(EnvFamily, Vec<TaskDataset>)> {
    let family = cfg.family();
    let manifest = read_text(&dir.manifest_path())
        .context("no dataset manifest; run the experts command first")?;
    let tasks = family.parse_manifest(&manifest)?;
    let mut datasets = Vec::with_capacity(tasks.len());
    for task in tasks {
        let text = read_text(&dir.dataset_path(task.task_id))?;
        let ds = expert::decode_dataset(&text, task)?;
        ds.validate(family.horizon)?;
        datasets.push(ds);
    }
    Ok((family, datasets))
}

// ── train-sf ─────────────────────────────────────────────────────────

fn fresh_sf_network(cfg: &RunConfig, family: &EnvFamily) -> Result<SfNetwork> {
    Ok(SfNetwork::new(
        family.state_dim,
        family.action_dim,
        cfg.sf_feature_dim,
        &cfg.sf_hidden,
        family.gamma,
        rng::derive(cfg.seed, "pipeline.sf"),
    )?)
}

const SF_CURVE_HEADER: &str = "step,l_reward,l_recon,l_td,l_mmd,l_total";

pub fn train_sf(cfg: &RunConfig, dir: &RunDir, resume: bool) -> Result<()> {
    write_resolved_config(cfg, dir)?;
    let (family, datasets) = load_datasets(cfg, dir)?;
    if cfg.sf_use_mmd && datasets.len() < 2 {
        bail!("sf.use_mmd = true needs at least 2 tasks (env.tasks = {})", datasets.len());
    }
    let mut net = fresh_sf_network(cfg, &family)?;
    let mut trainer = SfTrainer::new(&net, cfg.sf_train_config())?;
    let mut curve_text = format!("{SF_CURVE_HEADER}\n");
    if resume {
        let map = checkpoint::decode(&read_text(&dir.sf_checkpoint())?)?;
        net.restore_checkpoint(&map)?;
        trainer.restore_opt_entries(&map)?;
        curve_text = read_text(&dir.sf_curve())?;
    }
    if trainer.step >= cfg.sf_steps {
        bail!("checkpoint already at step {} of {}", trainer.step, cfg.sf_steps);
    }
    let remaining = cfg.sf_steps - trainer.step;
    let rows = trainer.run(&mut net, &datasets, remaining)?;
    for r in &rows {
        curve_text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step,
            fmt_float(r.l_reward),
            fmt_float(r.l_recon),
            fmt_float(r.l_td),
            fmt_float(r.l_mmd),
            fmt_float(r.l_total)
        ));
    }
    write_text(&dir.sf_curve(), &curve_text)?;
    write_text(
        &dir.sf_checkpoint(),
        &net.encode_checkpoint(&trainer.export_opt_entries()),
    )?;
    if let Some(last) = rows.last() {
        println!("sf training done at step {}: total loss {}", last.step, fmt_float(last.l_total));
    }
    Ok(())
}

pub fn load_sf_network(cfg: &RunConfig, dir: &RunDir, family: &EnvFamily) -> Result<SfNetwork> {
    let text = read_text(&dir.sf_checkpoint())
        .context("no SF checkpoint; run the train-sf command first")?;
    let mut net = fresh_sf_network(cfg, family)?;
    net.restore_checkpoint(&checkpoint::decode(&text)?)?;
    Ok(net)
}

// ── train-policy ─────────────────────────────────────────────────────

fn fresh_policy_parts(
    cfg: &RunConfig,
    family: &EnvFamily,
) -> Result<(ContextPolicy, ContextEncoder)> {
    let input_dim = cfg.context_source.input_dim(
        family.state_dim,
        family.action_dim,
        cfg.sf_feature_dim,
    );
    let encoder = ContextEncoder::new(
        cfg.context_source,
        input_dim,
        cfg.context_z_dim,
        rng::derive(cfg.seed, "pipeline.encoder"),
    )?;
    let policy = ContextPolicy::new(
        family.state_dim,
        cfg.context_z_dim,
        family.action_dim,
        &cfg.policy_hidden,
        family.action_bound,
        rng::derive(cfg.seed, "pipeline.policy"),
    )?;
    Ok((policy, encoder))
}

pub fn train_policy(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    write_resolved_config(cfg, dir)?;
    let (family, datasets) = load_datasets(cfg, dir)?;
    let net = match cfg.context_source {
        ContextSource::SfFeatures => Some(load_sf_network(cfg, dir, &family)?),
        ContextSource::RawTransitions => None,
    };
    let (mut pol, mut encoder) = fresh_policy_parts(cfg, &family)?;
    let sf_checksum = net.as_ref().map(|n| n.checksum());
    let rows = policy::train_policy(
        &mut pol,
        &mut encoder,
        net.as_ref(),
        &datasets,
        &cfg.policy_train_config(),
    )?;
    if let (Some(before), Some(n)) = (sf_checksum, net.as_ref()) {
        if n.checksum() != before {
            bail!("SF network changed during policy training");
        }
    }
    let mut curve_text = String::from("step,l_bc,l_mmd,l_total\n");
    for r in &rows {
        curve_text.push_str(&format!(
            "{},{},{},{}\n",
            r.step,
            fmt_float(r.l_bc),
            fmt_float(r.l_mmd),
            fmt_float(r.l_total)
        ));
    }
    write_text(&dir.policy_curve(), &curve_text)?;
    write_text(&dir.policy_checkpoint(), &policy::encode_policy_checkpoint(&pol, &encoder, &[]))?;
    if let Some(last) = rows.last() {
        println!("policy training done at step {}: bc loss {}", last.step, fmt_float(last.l_bc));
    }
    Ok(())
}

pub fn load_policy_parts(
    cfg: &RunConfig,
    dir: &RunDir,
    family: &EnvFamily,
) -> Result<(ContextPolicy, ContextEncoder)> {
    let text = read_text(&dir.policy_checkpoint())
        .context("no policy checkpoint; run the train-policy command first")?;
    let (mut pol, mut encoder) = fresh_policy_parts(cfg, family)?;
    policy::restore_policy_checkpoint(&checkpoint::decode(&text)?, &mut pol, &mut encoder)?;
    Ok((pol, encoder))
}

// ── adapt ────────────────────────────────────────────────────────────

/// Held-out tasks: freshly sampled, excluding any task whose parameters
/// coincide with a training task's.
pub fn sample_test_tasks(
    family: &EnvFamily,
    training: &[TaskSpec],
    count: usize,
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    let mut out: Vec<TaskSpec> = Vec::with_capacity(count);
    for attempt in 0..16u64 {
        let batch = family.sample_tasks(
            count,
            rng::derive_tags(seed, &[rng::fnv1a64(b"test-tasks"), attempt]),
        )?;
        for t in batch {
            let clashes = |existing: &TaskSpec| {
                existing.task_params.len() == t.task_params.len()
                    && existing
                        .task_params
                        .iter()
                        .zip(&t.task_params)
                        .all(|(a, b)| (a - b).abs() < 1e-9)
            };
            if training.iter().any(|tr| clashes(tr)) || out.iter().any(|o| clashes(o)) {
                continue;
            }
            let task_id = 1000 + out.len();
            out.push(TaskSpec { task_id, ..t });
            if out.len() == count {
                return Ok(out);
            }
        }
    }
    bail!("could not sample {count} held-out tasks distinct from the training set")
}

pub fn adapt(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    write_resolved_config(cfg, dir)?;
    let (family, datasets) = load_datasets(cfg, dir)?;
    let net = match cfg.context_source {
        ContextSource::SfFeatures => Some(load_sf_network(cfg, dir, &family)?),
        ContextSource::RawTransitions => None,
    };
    let (pol, encoder) = load_policy_parts(cfg, dir, &family)?;
    let training: Vec<TaskSpec> = datasets.iter().map(|d| d.task.clone()).collect();
    let test_tasks = sample_test_tasks(&family, &training, cfg.adapt_test_tasks, cfg.seed)?;

    let checksums_before = (
        net.as_ref().map(|n| n.checksum()),
        pol.checksum(),
        encoder.checksum(),
    );
    let acfg = AdaptConfig {
        context_len: cfg.context_len,
        candidate_episodes: cfg.adapt_candidate_episodes,
        eval_episodes: cfg.adapt_eval_episodes,
        seed: cfg.seed,
    };

    let k = datasets.len();
    let mut text = String::from("new_task_id,chosen_k");
    for i in 0..k {
        text.push_str(&format!(",candidate_return_{i}"));
    }
    text.push_str(",eval_mean,eval_std,normalized_score\n");
    let mut scores = Vec::with_capacity(test_tasks.len());
    for task in &test_tasks {
        let r = meta::adapt(&family, task, &pol, &encoder, net.as_ref(), &datasets, &acfg)?;
        text.push_str(&format!("{},{}", task.task_id, r.chosen_k));
        for c in &r.candidate_returns {
            text.push_str(&format!(",{}", fmt_float(*c)));
        }
        text.push_str(&format!(
            ",{},{},{}\n",
            fmt_float(meta::mean(&r.eval_returns)),
            fmt_float(meta::std_dev(&r.eval_returns)),
            fmt_float(r.normalized_score)
        ));
        println!(
            "task {}: chose candidate {}, normalized score {:.3}",
            task.task_id, r.chosen_k, r.normalized_score
        );
        scores.push(r.normalized_score);
    }
    let checksums_after = (
        net.as_ref().map(|n| n.checksum()),
        pol.checksum(),
        encoder.checksum(),
    );
    if checksums_before != checksums_after {
        bail!("adaptation modified model parameters");
    }
    write_text(&dir.adapt_results(), &text)?;
    println!("mean normalized score {:.3}", meta::mean(&scores));
    Ok(())
}

// ── export-embeddings ────────────────────────────────────────────────

pub const EMBED_WINDOWS_PER_TASK: usize = 16;

/// Deterministic per-task context samples for plotting.
pub fn embedding_rows(
    cfg: &RunConfig,
    family: &EnvFamily,
    datasets: &[TaskDataset],
    net: Option<&SfNetwork>,
    encoder: &ContextEncoder,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let _ = family;
    let mut rows = Vec::new();
    for ds in datasets {
        let mut stream =
            rng::tagged_stream(cfg.seed, &[rng::fnv1a64(b"embed"), ds.task.task_id as u64]);
        for _ in 0..EMBED_WINDOWS_PER_TASK {
            let (start, end) = ds.episodes[stream.gen_range(0..ds.episodes.len())];
            let slice = &ds.transitions[start..end];
            let cut = stream.gen_range(1..=slice.len());
            let window = window_from_episode(slice, cut, cfg.context_len)?;
            rows.push((ds.task.task_id, encoder.encode(net, &window)?));
        }
    }
    Ok(rows)
}

pub fn export_embeddings(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    write_resolved_config(cfg, dir)?;
    let (family, datasets) = load_datasets(cfg, dir)?;
    let net = match cfg.context_source {
        ContextSource::SfFeatures => Some(load_sf_network(cfg, dir, &family)?),
        ContextSource::RawTransitions => None,
    };
    let (_, encoder) = load_policy_parts(cfg, dir, &family)?;
    let rows = embedding_rows(cfg, &family, &datasets, net.as_ref(), &encoder)?;

    let mut text = String::from("task_id");
    for j in 0..cfg.context_z_dim {
        text.push_str(&format!(",z{j}"));
    }
    text.push('\n');
    for (task_id, z) in &rows {
        text.push_str(&task_id.to_string());
        for v in z {
            text.push_str(&format!(",{}", fmt_float(*v)));
        }
        text.push('\n');
    }
    write_text(&dir.embeddings(), &text)?;

    let zs: Vec<Vec<f64>> = rows.iter().map(|(_, z)| z.clone()).collect();
    let n_comp = 2.min(cfg.context_z_dim);
    let (comps, mean) = crate::pca::components(&zs, n_comp)?;
    let mut text = String::from("task_id");
    for j in 0..n_comp {
        text.push_str(&format!(",pc{j}"));
    }
    text.push('\n');
    for (task_id, z) in &rows {
        let p = crate::pca::project(z, &comps, &mean);
        text.push_str(&task_id.to_string());
        for v in &p {
            text.push_str(&format!(",{}", fmt_float(*v)));
        }
        text.push('\n');
    }
    write_text(&dir.embeddings_pca(), &text)?;
    println!("exported {} embeddings", rows.len());
    Ok(())
}

// ── grad-check ───────────────────────────────────────────────────────

/// SF network whose head parameters are replaced by the (possibly
/// perturbed) sets handed to the finite-difference driver.
fn net_from_sets(template: &SfNetwork, params: &[&sfc_core::diffkit::ParameterSet]) -> SfNetwork {
    let mut n = template.clone();
    n.phi.params = params[0].clone();
    n.sf_head.params = params[1].clone();
    n.omega_head.params = params[2].clone();
    n.recon_head.params = params[3].clone();
    n
}

/// Finite-difference verification of the stage-2 and stage-3 loss terms on
/// tiny instances. Prints one line per term; errors if any exceeds `tol`.
pub fn grad_check_suite(tol: f64) -> Result<Vec<(String, f64)>> {
    use sfc_core::envs::Transition;

    let net = SfNetwork::new(2, 2, 3, &[4], 0.9, 12)?;
    let mut stream = rng::named_stream(12, "gradcheck-data");
    let mut transitions = Vec::new();
    for _ in 0..4 {
        let mut v = |n: usize| -> Vec<f64> {
            (0..n).map(|_| stream.gen_range(-1.0f64..1.0)).collect()
        };
        transitions.push(Transition {
            state: v(2),
            action: v(2),
            reward: v(1)[0],
            next_state: v(2),
            done: false,
            task_id: 0,
        });
    }
    let batch: Vec<&Transition> = transitions.iter().collect();
    let kernel = sfc_core::mmd::KernelConfig::fixed(1.0);
    let targets = sfnet::td_targets(&net, &batch, true)?;

    type Builder<'a> = &'a dyn Fn(
        &SfNetwork,
        &mut Tape,
        &SfSets,
    ) -> sfc_core::Result<sfc_core::diffkit::NodeId>;

    let mut results: Vec<(String, f64)> = Vec::new();
    let mut check = |name: &str, build: Builder| -> Result<()> {
        let mut n = net.clone();
        let template = net.clone();
        let report = grad_check(
            &mut [
                &mut n.phi.params,
                &mut n.sf_head.params,
                &mut n.omega_head.params,
                &mut n.recon_head.params,
            ],
            DEFAULT_STEP,
            |tape, set_ids, param_sets| {
                let sets = SfSets {
                    phi: set_ids[0],
                    sf: set_ids[1],
                    omega: set_ids[2],
                    recon: set_ids[3],
                };
                let current = net_from_sets(&template, param_sets);
                build(&current, tape, &sets)
            },
        )?;
        println!("{name}: max relative error {:.3e} ({})", report.max_rel_error, report.worst_param);
        results.push((name.to_string(), report.max_rel_error));
        Ok(())
    };

    let batch_ref = &batch;
    check("loss_reward", &|n, tape, sets| {
        sfnet::build_loss_reward(n, tape, sets, batch_ref, false)
    })?;
    check("loss_recon", &|n, tape, sets| {
        sfnet::build_loss_recon(n, tape, sets, batch_ref, false)
    })?;
    let targets_ref = &targets;
    check("loss_td", &|n, tape, sets| {
        sfnet::build_loss_td(n, tape, sets, batch_ref, targets_ref, false)
    })?;
    let kernel_ref = &kernel;
    check("loss_mmd_omega", &|n, tape, sets| {
        let per_task = vec![
            batch_ref[..2].to_vec(),
            batch_ref[2..].to_vec(),
        ];
        sfnet::build_loss_mmd_omega(n, tape, sets, &per_task, kernel_ref, false)
    })?;

    // Stage-3 terms: policy BC through the encoder, and context separation.
    let encoder = ContextEncoder::new(ContextSource::RawTransitions, 7, 3, 12)?;
    let pol = ContextPolicy::new(2, 3, 2, &[4], 1.0, 12)?;
    {
        let mut p = pol.clone();
        let mut e = encoder.clone();
        let window: Vec<&Transition> = transitions.iter().collect();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = transitions
            .iter()
            .map(|t| (t.state.clone(), t.action.clone()))
            .collect();
        let report = grad_check(
            &mut [&mut p.net.params, &mut e.gru.params],
            DEFAULT_STEP,
            |tape, set_ids, param_sets| {
                let mut cur_pol = pol.clone();
                cur_pol.net.params = param_sets[0].clone();
                let mut cur_enc = encoder.clone();
                cur_enc.gru.params = param_sets[1].clone();
                let z = cur_enc.encode_on_tape(tape, set_ids[1], None, &window)?;
                let pair_refs: Vec<(&[f64], &[f64])> =
                    pairs.iter().map(|(s, a)| (s.as_slice(), a.as_slice())).collect();
                policy::build_loss_bc(&cur_pol, tape, set_ids[0], z, &pair_refs)
            },
        )?;
        println!(
            "loss_bc: max relative error {:.3e} ({})",
            report.max_rel_error, report.worst_param
        );
        results.push(("loss_bc".to_string(), report.max_rel_error));
    }
    {
        let mut e = encoder.clone();
        let windows: Vec<Vec<&Transition>> =
            vec![transitions[..2].iter().collect(), transitions[2..].iter().collect()];
        let report = grad_check(&mut [&mut e.gru.params], DEFAULT_STEP, |tape, set_ids, param_sets| {
            let mut cur_enc = encoder.clone();
            cur_enc.gru.params = param_sets[0].clone();
            let mut groups = Vec::new();
            for w in &windows {
                let z = cur_enc.encode_on_tape(tape, set_ids[0], None, w)?;
                groups.push(vec![z, z]);
            }
            sfc_core::mmd::pairwise_separation_on_tape(
                tape,
                &groups,
                sfc_core::mmd::SeparationSign::Separate,
                &kernel,
            )
        })?;
        println!(
            "loss_context_sep: max relative error {:.3e} ({})",
            report.max_rel_error, report.worst_param
        );
        results.push(("loss_context_sep".to_string(), report.max_rel_error));
    }

    for (name, err) in &results {
        if !err.is_finite() || *err > tol {
            bail!("{name} gradient check failed: {err:.3e} > {tol:.1e}");
        }
    }
    Ok(results)
}

pub fn grad_check_cmd() -> Result<()> {
    grad_check_suite(1e-4)?;
    println!("all gradient checks passed");
    Ok(())
}

/// Shared entry point so tests can run commands without spawning processes.
pub fn run_command(
    command: &crate::CommandKind,
    cfg: &RunConfig,
    out_root: &Path,
) -> Result<()> {
    let dir = RunDir::new(out_root, &cfg.run_name);
    match command {
        crate::CommandKind::Experts => experts(cfg, &dir),
        crate::CommandKind::TrainSf { resume } => train_sf(cfg, &dir, *resume),
        crate::CommandKind::TrainPolicy => train_policy(cfg, &dir),
        crate::CommandKind::Adapt => adapt(cfg, &dir),
        crate::CommandKind::ExportEmbeddings => export_embeddings(cfg, &dir),
        crate::CommandKind::GradCheck => grad_check_cmd(),
    }
}
