//! Minimal reverse-mode differentiable computation: parameter storage, a
//! flat tape, dense layers, a GRU cell, Adam, finite-difference gradient
//! checking, and a text checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use gru::GruCell;
pub use mlp::{Activation, Mlp};
pub use params::ParameterSet;
pub use tape::{NodeId, SetId, Tape};
