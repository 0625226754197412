//! Core library for successor-feature context meta-learning on point-mass
//! task families: a small reverse-mode autodiff kit, the environment
//! families, expert data collection, MMD losses, the SF network, the GRU
//! context encoder, the context-conditioned policy, and test-time
//! adaptation. No IO here; the companion CLI crate handles files and runs.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod context;
pub mod diffkit;
pub mod envs;
pub mod error;
pub mod expert;
pub mod meta;
pub mod mmd;
pub mod policy;
pub mod rng;
pub mod sfnet;
pub mod td3;

pub use error::{Error, Result};
