//! Experiment harness around the rbfq library: config resolution, training
//! runs with CSV artifacts, the four-variant ablation matrix, checkpoint
//! evaluation, and gradient checking.

pub mod commands;
pub mod config;
pub mod harness;
