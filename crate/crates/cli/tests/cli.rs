//! End-to-end command tests driven in-process through the library surface.

use std::fs;
use std::path::Path;

use sfc::commands::{self, run_command};
use sfc::config::RunConfig;
use sfc::layout::RunDir;
use sfc::CommandKind;

fn tiny_config(run_name: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text(&format!(
        "run_name = {run_name}\n\
         seed = 5\n\
         env.family = point_vel\n\
         env.tasks = 2\n\
         data.transitions_per_task = 192\n\
         sf.feature_dim = 4\n\
         sf.hidden = 16\n\
         sf.steps = 40\n\
         sf.batch_per_task = 8\n\
         sf.mmd_samples = 4\n\
         context.len = 16\n\
         context.z_dim = 4\n\
         policy.hidden = 16\n\
         policy.steps = 40\n\
         policy.batch_per_task = 8\n\
         policy.sep_windows = 2\n\
         adapt.test_tasks = 2\n\
         adapt.eval_episodes = 3\n"
    ))
    .unwrap();
    cfg.validate().unwrap();
    cfg
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn experts_rerun_with_same_seed_writes_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("det");
    run_command(&CommandKind::Experts, &cfg, tmp.path()).unwrap();
    let dir = RunDir::new(tmp.path(), "det");
    let first = read(&dir.dataset_path(0));
    let manifest = read(&dir.manifest_path());
    run_command(&CommandKind::Experts, &cfg, tmp.path()).unwrap();
    assert_eq!(read(&dir.dataset_path(0)), first);
    assert_eq!(read(&dir.manifest_path()), manifest);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("orig");
    run_command(&CommandKind::Experts, &cfg, tmp.path()).unwrap();
    let dir = RunDir::new(tmp.path(), "orig");

    let mut reloaded = RunConfig::default();
    reloaded.apply_text(&read(&dir.config_resolved())).unwrap();
    reloaded.set("run_name", "copy").unwrap();
    run_command(&CommandKind::Experts, &reloaded, tmp.path()).unwrap();
    let copy = RunDir::new(tmp.path(), "copy");
    assert_eq!(read(&copy.dataset_path(1)), read(&dir.dataset_path(1)));
}

#[test]
fn train_sf_requires_datasets_first() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("nodata");
    let err = run_command(&CommandKind::TrainSf { resume: false }, &cfg, tmp.path())
        .unwrap_err();
    assert!(format!("{err:#}").contains("experts"), "{err:#}");
}

#[test]
fn train_sf_resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();

    let mut full = tiny_config("full");
    full.sf_steps = 80;
    run_command(&CommandKind::Experts, &full, tmp.path()).unwrap();
    run_command(&CommandKind::TrainSf { resume: false }, &full, tmp.path()).unwrap();

    let mut half = tiny_config("half");
    half.sf_steps = 40;
    run_command(&CommandKind::Experts, &half, tmp.path()).unwrap();
    run_command(&CommandKind::TrainSf { resume: false }, &half, tmp.path()).unwrap();
    half.sf_steps = 80;
    run_command(&CommandKind::TrainSf { resume: true }, &half, tmp.path()).unwrap();

    let full_dir = RunDir::new(tmp.path(), "full");
    let half_dir = RunDir::new(tmp.path(), "half");
    assert_eq!(
        read(&half_dir.sf_checkpoint()),
        read(&full_dir.sf_checkpoint()),
        "resumed checkpoint should match the uninterrupted one"
    );
    // Curve files are contiguous and identical, covering steps 0..80.
    let full_curve = read(&full_dir.sf_curve());
    assert_eq!(read(&half_dir.sf_curve()), full_curve);
    let steps: Vec<usize> = full_curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps.first(), Some(&0));
    assert_eq!(steps.last(), Some(&70));
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 10));
}

#[test]
fn full_pipeline_emits_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("pipe");
    run_command(&CommandKind::Experts, &cfg, tmp.path()).unwrap();
    run_command(&CommandKind::TrainSf { resume: false }, &cfg, tmp.path()).unwrap();
    run_command(&CommandKind::TrainPolicy, &cfg, tmp.path()).unwrap();
    run_command(&CommandKind::Adapt, &cfg, tmp.path()).unwrap();
    run_command(&CommandKind::ExportEmbeddings, &cfg, tmp.path()).unwrap();

    let dir = RunDir::new(tmp.path(), "pipe");
    let adapt = read(&dir.adapt_results());
    let header = adapt.lines().next().unwrap();
    assert_eq!(
        header,
        "new_task_id,chosen_k,candidate_return_0,candidate_return_1,eval_mean,eval_std,normalized_score"
    );
    assert_eq!(adapt.lines().count(), 1 + cfg.adapt_test_tasks);

    // Embedding rows carry task_id plus z_dim columns.
    let emb = read(&dir.embeddings());
    let cols = emb.lines().next().unwrap().split(',').count();
    assert_eq!(cols, cfg.context_z_dim + 1);
    assert_eq!(
        emb.lines().count(),
        1 + cfg.env_tasks * commands::EMBED_WINDOWS_PER_TASK
    );
    let pca = read(&dir.embeddings_pca());
    assert_eq!(pca.lines().next().unwrap(), "task_id,pc0,pc1");
}

#[test]
fn raw_context_source_skips_the_sf_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config("raw");
    cfg.set("context.source", "raw").unwrap();
    run_command(&CommandKind::Experts, &cfg, tmp.path()).unwrap();
    run_command(&CommandKind::TrainPolicy, &cfg, tmp.path()).unwrap();
    run_command(&CommandKind::Adapt, &cfg, tmp.path()).unwrap();
    let dir = RunDir::new(tmp.path(), "raw");
    assert!(!dir.sf_checkpoint().exists());
    assert!(dir.adapt_results().exists());
}

#[test]
fn train_policy_without_sf_checkpoint_points_at_train_sf() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config("nosf");
    run_command(&CommandKind::Experts, &cfg, tmp.path()).unwrap();
    let err = run_command(&CommandKind::TrainPolicy, &cfg, tmp.path()).unwrap_err();
    assert!(format!("{err:#}").contains("train-sf"), "{err:#}");
}

#[test]
fn grad_check_command_passes_at_default_tolerance() {
    let results = commands::grad_check_suite(1e-4).unwrap();
    assert_eq!(results.len(), 6);
    for (name, err) in &results {
        assert!(*err <= 1e-4, "{name}: {err}");
    }
}
