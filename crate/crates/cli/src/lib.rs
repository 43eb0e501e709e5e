//! Batch runner for the simulator: seeded runs, comparisons and
//! hyperparameter sweeps.

pub mod commands;
pub mod config;
pub mod plot;
