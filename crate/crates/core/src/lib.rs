//! Tracking consensus of high-order nonlinear multi-agent systems under
//! intermittent ON/OFF communication and colored noise.
//!
//! The pipeline runs: graph and design synthesis, ON/OFF schedule generation
//! and certification, a distributed virtual layer that reconstructs the
//! leader, per-agent adaptive neural backstepping controllers, closed-loop
//! simulation, and ensemble analysis.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod controller;
pub mod design;
pub mod engine;
pub mod error;
pub mod graph;
pub mod integrate;
pub mod linalg;
pub mod noise;
pub mod plant;
pub mod rng;
pub mod schedule;
pub mod virtual_layer;

pub use config::{Coupling, ExperimentConfig, SimConfig};
pub use design::{Design, DesignInputs, DesignOutput};
pub use engine::{run, run_ensemble, EnsembleResult, SimTrace, Simulation};
pub use error::{Error, Result};
pub use graph::Graph;
pub use schedule::{Mode, ModeSchedule, ScheduleParams};
