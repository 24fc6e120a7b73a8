//! Loss, optimizer, training loop and ablation sweeps.

pub mod ablate;
pub mod adam;
pub mod config;
pub mod loss;
pub mod trainer;

pub use adam::Adam;
pub use config::{Precision, StscPaths, Timing, TrainConfig};
pub use loss::{voting_mse, voting_mse_loss};
pub use trainer::{EpochMetrics, Evaluation, TrainReport, Trainer};

#[cfg(test)]
mod tests;
