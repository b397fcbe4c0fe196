//! Desk-scale adversarial training for the windowed transformer GAN:
//! toy datasets, Adam, the GAN step, checkpointed training runs, reports
//! and the `wingan` command line.

pub mod cli;
pub mod config;
pub mod data;
pub mod gan;
pub mod gradsuite;
pub mod images;
pub mod optim;
pub mod report;
pub mod trainer;

pub use config::TrainConfig;
pub use trainer::Trainer;
