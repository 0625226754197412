//! Library surface of the CLI crate, split out so integration tests can
//! drive commands in-process instead of spawning binaries.

pub mod commands;
pub mod config;
pub mod layout;
pub mod pca;

use clap::Subcommand;

#[derive(Debug, Clone, Subcommand)]
pub enum CommandKind {
    /// Stage 1: collect per-task expert datasets and the task manifest.
    Experts,
    /// Stage 2: train the successor-feature network.
    TrainSf {
        /// Continue from the existing SF checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Stage 3: train the context encoder and the cloned policy.
    TrainPolicy,
    /// Test-time adaptation on freshly sampled held-out tasks.
    Adapt,
    /// Export per-task context vectors and their PCA projections.
    ExportEmbeddings,
    /// Finite-difference verification of every loss term's gradients.
    GradCheck,
}
