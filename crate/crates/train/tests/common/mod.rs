#![allow(dead_code)]

use std::path::Path;

use wingan_train::config::Precision;
use wingan_train::TrainConfig;

/// A 16² float64 run small enough for many short trainings.
pub fn mini(dir: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = 3;
    cfg.steps = 4;
    cfg.batch_size = 4;
    cfg.precision = Precision::F64;
    cfg.dataset.resolution = 16;
    cfg.generator.channels = 16;
    cfg.generator.latent_dim = 16;
    cfg.discriminator.channels = 16;
    cfg.loss.r1_interval = 2;
    cfg.output.dir = dir.to_path_buf();
    cfg.output.every = 0;
    cfg.output.grid = 4;
    cfg
}

pub fn bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
