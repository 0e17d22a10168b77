//! Experiment driver for the graph learning layer.
//!
//! Every command reads a flat `key = value` config, writes CSV (and for the
//! tau ablation SVG) files into an output directory it locks for the
//! duration of the run, and is deterministic given the config and seed.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{
    attack, gen_data, gradcheck, load_data, tau_ablation, train_cmd, AblationSummary, AttackSummary, GradcheckSummary,
    TauResult, TrainSummary,
};
pub use config::RunConfig;
pub use output::OutputDir;
