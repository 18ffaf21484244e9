//! Experiment plumbing: configuration, synthetic sweeps, IHDP runs and plot
//! data.

pub mod config;
pub mod ihdp;
pub mod plot;
pub mod sweep;

pub use config::ExperimentConfig;
pub use ihdp::{load_ihdp, run_ihdp, IhdpReport};
pub use plot::emit_plot_data;
pub use sweep::{run_sweep, RunRecord, SweepOutcome};
