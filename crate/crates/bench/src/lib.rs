//! Experiment harness for the `stiefel-svrg` optimizers: multi-seed runs,
//! summary tables, convergence traces and the acceptance checks.

pub mod config;
pub mod experiment;
pub mod output;
pub mod verify;
