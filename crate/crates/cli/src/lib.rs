//! Data generation, pretraining, evaluation and ablation driver.

pub mod config;
pub mod pipeline;
pub mod vis;
