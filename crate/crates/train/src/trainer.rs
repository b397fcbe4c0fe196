//! The training loop: data and noise draws, updates, emissions and resume.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wingan_core::checkpoint::{config_hash, Checkpoint, CheckpointError, Group, RngState};
use wingan_core::networks::{Discriminator, Generator};
use wingan_tensor::{ParamStore, Real, Tensor, TensorError};

use crate::config::{ConfigError, TrainConfig};
use crate::data::{DataError, Dataset};
use crate::gan::{gan_step, Models, StepBatch, StepError, StepStats};
use crate::images::save_grid;
use crate::optim::{Adam, AdamConfig};
use crate::report::{diagnose, DiagnoseError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Diagnose(#[from] DiagnoseError),
    #[error("writing image: {0}")]
    Image(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("step {step}: {source}; state dumped to {}", dump.display())]
    Aborted { step: u64, source: StepError, dump: PathBuf },
    #[error("checkpoint was written by a different configuration")]
    ConfigMismatch,
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

/// RNG streams derived from the run seed.
const STREAM_TRAIN: u64 = 0;
const STREAM_G_INIT: u64 = 1;
const STREAM_D_INIT: u64 = 2;
const STREAM_SAMPLES: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Checkpoint metadata beside the tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub config: TrainConfig,
    pub adam_g_t: u64,
    pub adam_d_t: u64,
}

pub struct Trainer<T: Real> {
    pub cfg: TrainConfig,
    pub models: Models<T>,
    /// Running average of the generator weights.
    pub g_ema: ParamStore<T>,
    pub adam_g: Adam<T>,
    pub adam_d: Adam<T>,
    pub dataset: Dataset,
    pub step: u64,
    rng: ChaCha8Rng,
    pub sample_z: Tensor<T>,
    pub sample_labels: Option<Vec<usize>>,
}

/// Files written by one emission.
#[derive(Debug, Clone, Default)]
pub struct Emission {
    pub checkpoint: PathBuf,
    pub samples: Option<PathBuf>,
    pub reports: Vec<PathBuf>,
}

/// Builds both networks from a config with their seeded initializations.
pub fn build_models<T: Real>(cfg: &TrainConfig) -> Result<Models<T>, TrainError> {
    let (g, gs) = Generator::build::<T, _>(&cfg.generator_spec()?, &mut stream_rng(cfg.seed, STREAM_G_INIT))?;
    let (d, ds) = Discriminator::build::<T, _>(&cfg.discriminator_spec()?, &mut stream_rng(cfg.seed, STREAM_D_INIT))?;
    Ok(Models { g, gs, d, ds })
}

/// Fixed latents and labels for sample grids, independent of training draws.
pub fn sample_inputs<T: Real>(cfg: &TrainConfig, latent: usize, n: usize) -> (Tensor<T>, Option<Vec<usize>>) {
    let mut r = stream_rng(cfg.seed, STREAM_SAMPLES);
    let z = Tensor::randn(&[n, latent], 1.0, &mut r);
    let labels = cfg.classes().map(|k| (0..n).map(|i| i % k).collect());
    (z, labels)
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let models = build_models::<T>(&cfg)?;
        let o = &cfg.optim;
        let adam = |lr| AdamConfig {
            lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        };
        let adam_g = Adam::new(&models.gs, adam(o.lr_g));
        let adam_d = Adam::new(&models.ds, adam(o.lr_d));
        let dataset = Dataset::new(&cfg.dataset, cfg.seed)?;
        let (sample_z, sample_labels) = sample_inputs(&cfg, models.g.spec.latent_dim, cfg.output.grid.max(1));
        Ok(Self {
            rng: stream_rng(cfg.seed, STREAM_TRAIN),
            cfg,
            g_ema: models.gs.clone(),
            models,
            adam_g,
            adam_d,
            dataset,
            step: 0,
            sample_z,
            sample_labels,
        })
    }

    pub fn config_hash(&self) -> [u8; 32] {
        config_hash(&self.cfg.canonical())
    }

    /// Draws the next step's batch from the training stream.
    pub fn next_batch(&mut self) -> StepBatch<T> {
        let b = self.cfg.batch_size;
        let latent = self.models.g.spec.latent_dim;
        let indices: Vec<u64> = (0..b).map(|_| self.rng.random::<u64>()).collect();
        let (real, labels) = self.dataset.batch::<T>(&indices);
        let z_d = Tensor::randn(&[b, latent], 1.0, &mut self.rng);
        let z_g = Tensor::randn(&[b, latent], 1.0, &mut self.rng);
        let conditional = self.cfg.classes();
        let fake_labels = conditional.map(|k| (0..b).map(|_| self.rng.random_range(0..k)).collect());
        StepBatch {
            real,
            real_labels: conditional.map(|_| labels),
            z_d,
            z_g,
            fake_labels,
        }
    }

    /// One training step; on failure the pre-step state is dumped beside the outputs.
    pub fn train_step(&mut self) -> Result<StepStats, TrainError> {
        let batch = self.next_batch();
        let penalty = self.cfg.loss.r1_gamma > 0.0 && self.step % self.cfg.loss.r1_interval == 0;
        let before = self.checkpoint();
        match gan_step(&mut self.models, &mut self.adam_g, &mut self.adam_d, &batch, &self.cfg.loss, penalty) {
            Ok(stats) => {
                self.update_ema();
                self.step += 1;
                Ok(stats)
            }
            Err(source) => {
                let dump = self.cfg.output.dir.join(format!("abort_{:06}.wgck", self.step));
                before.save(&dump)?;
                let note = format!("step {}\nerror {source}\n", self.step);
                std::fs::write(dump.with_extension("txt"), note)?;
                Err(TrainError::Aborted {
                    step: self.step,
                    source,
                    dump,
                })
            }
        }
    }

    /// Blends the live generator into the average with a warm-up of
    /// `min(beta, (1 + t) / (10 + t))`.
    fn update_ema(&mut self) {
        let t = self.step as f64;
        let beta = self.cfg.optim.ema_beta.min((1.0 + t) / (10.0 + t));
        let ids: Vec<_> = self.models.gs.iter().map(|(id, _)| id).collect();
        for id in ids {
            let live = self.models.gs.value(id);
            let avg = self.g_ema.value(id);
            let mixed = Tensor::from_fn(live.shape(), |i| {
                let (a, l) = (avg.data()[i].as_f64(), live.data()[i].as_f64());
                T::of(beta * a + (1.0 - beta) * l)
            });
            self.g_ema.set_value(id, mixed);
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let meta = Meta {
            config: self.cfg.clone(),
            adam_g_t: self.adam_g.t,
            adam_d_t: self.adam_d.t,
        };
        let [gm, gv] = self.adam_g.groups("adam_g");
        let [dm, dv] = self.adam_d.groups("adam_d");
        Checkpoint {
            step: self.step,
            config_hash: self.config_hash(),
            meta: serde_json::to_string(&meta).expect("meta serializes"),
            rng: RngState {
                seed: self.cfg.seed,
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
            groups: vec![
                Group::from_store("generator", &self.models.gs),
                Group::from_store("generator_ema", &self.g_ema),
                Group::from_store("discriminator", &self.models.ds),
                gm,
                gv,
                dm,
                dv,
            ],
        }
    }

    /// Restores a checkpoint written under the same trajectory-shaping config.
    pub fn resume(cfg: TrainConfig, ck: &Checkpoint<T>) -> Result<Self, TrainError> {
        let mut t = Self::new(cfg)?;
        if ck.config_hash != t.config_hash() {
            return Err(TrainError::ConfigMismatch);
        }
        let meta: Meta = serde_json::from_str(&ck.meta).map_err(|e| TrainError::Meta(e.to_string()))?;
        ck.group("generator")?.load_into(&mut t.models.gs)?;
        ck.group("generator_ema")?.load_into(&mut t.g_ema)?;
        ck.group("discriminator")?.load_into(&mut t.models.ds)?;
        t.adam_g.restore(ck.group("adam_g.m")?, ck.group("adam_g.v")?, meta.adam_g_t)?;
        t.adam_d.restore(ck.group("adam_d.m")?, ck.group("adam_d.v")?, meta.adam_d_t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ck.rng.seed);
        rng.set_stream(ck.rng.stream);
        rng.set_word_pos(ck.rng.word_pos);
        t.rng = rng;
        t.step = ck.step;
        Ok(t)
    }

    pub fn samples(&self) -> Result<Tensor<T>, TrainError> {
        Ok(self.models.g.generate(&self.g_ema, &self.sample_z, self.sample_labels.as_deref())?)
    }

    /// Writes `ckpt_<step>.wgck`, `latest.wgck` and, unless `checkpoint_only`,
    /// the sample grid and requested reports.
    pub fn emit(&self, checkpoint_only: bool) -> Result<Emission, TrainError> {
        let dir = &self.cfg.output.dir;
        std::fs::create_dir_all(dir)?;
        let ck = self.checkpoint();
        let path = dir.join(format!("ckpt_{:06}.wgck", self.step));
        ck.save(&path)?;
        ck.save(&dir.join("latest.wgck"))?;
        let mut em = Emission {
            checkpoint: path,
            ..Default::default()
        };
        if checkpoint_only {
            return Ok(em);
        }
        let grid = dir.join(format!("samples_{:06}.png", self.step));
        save_grid(&self.samples()?, &grid)?;
        em.samples = Some(grid);
        if self.cfg.output.diagnostics {
            let rep = diagnose(&self.models, &self.sample_z, self.sample_labels.as_deref())?;
            em.reports = rep.write(&dir.join(format!("reports_{:06}", self.step)))?;
        }
        Ok(em)
    }

    /// Trains until `cfg.steps`, emitting every `output.every` steps and at the
    /// end. `observe` sees each step and may stop the run early by returning false.
    pub fn run(&mut self, mut observe: impl FnMut(&Self, &StepStats) -> bool) -> Result<Vec<Emission>, TrainError> {
        let mut out = Vec::new();
        if self.cfg.steps == 0 && self.step == 0 {
            out.push(self.emit(true)?);
            return Ok(out);
        }
        let every = self.cfg.output.every;
        while self.step < self.cfg.steps {
            let stats = self.train_step()?;
            if self.step % 50 == 0 {
                log::info!(
                    "step {} loss_d {:.4} loss_g {:.4} r1 {:.4} D(real) {:.3} D(fake) {:.3}",
                    self.step,
                    stats.loss_d,
                    stats.loss_g,
                    stats.r1,
                    stats.d_real,
                    stats.d_fake
                );
            }
            let keep = observe(self, &stats);
            if !keep || self.step == self.cfg.steps || (every > 0 && self.step % every == 0) {
                out.push(self.emit(false)?);
            }
            if !keep {
                break;
            }
        }
        Ok(out)
    }
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Checkpoint<T>, Meta), TrainError> {
    let ck = Checkpoint::<T>::load(path)?;
    let meta: Meta = serde_json::from_str(&ck.meta).map_err(|e| TrainError::Meta(e.to_string()))?;
    Ok((ck, meta))
}
