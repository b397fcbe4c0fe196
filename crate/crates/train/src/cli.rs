//! The `wingan` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wingan_core::blocks::Placement;
use wingan_core::checkpoint::peek_dtype;
use wingan_core::networks::census;
use wingan_tensor::{DType, Real};

use crate::config::{AttentionKind, Precision, TrainConfig};
use crate::gradsuite;
use crate::images::save_grid;
use crate::report::diagnose;
use crate::trainer::{build_models, load_checkpoint, sample_inputs, Trainer};

pub const SEED_ENV: &str = "STRANS_SEED";

#[derive(Debug, Parser)]
#[command(name = "wingan", version, about = "Windowed-attention transformer GAN at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlacementArg {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttentionArg {
    Global,
    Swin,
}

/// Overrides shared by every subcommand that builds networks.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed (the STRANS_SEED environment variable takes precedence).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Conditional placement; also enables conditioning.
    #[arg(long, value_enum)]
    pub placement: Option<PlacementArg>,
    #[arg(long, value_enum)]
    pub attention: Option<AttentionArg>,
    /// Window side for generator and discriminator.
    #[arg(long)]
    pub window: Option<usize>,
    /// Allow global attention above the token cap.
    #[arg(long)]
    pub force_memory: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and emit checkpoints, sample grids and optional reports.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written under the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render a sample grid from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG file to write.
        #[arg(long)]
        out: PathBuf,
        /// Latent seed; defaults to the run seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Write norm-ratio and attention-distance reports for a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Run the 64-bit finite-difference gradient suite.
    Gradcheck,
    /// Print trainable parameter counts per block.
    Census {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

pub fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| format!("{SEED_ENV}={s} is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p).map_err(|e| e.to_string())?,
            None => TrainConfig::default(),
        };
        if let Some(s) = env_seed()?.or(self.seed) {
            cfg.seed = s;
        }
        if let Some(n) = self.steps {
            cfg.steps = n;
        }
        if let Some(p) = self.placement {
            cfg.conditional.enabled = true;
            cfg.conditional.placement = match p {
                PlacementArg::A => Placement::A,
                PlacementArg::B => Placement::B,
                PlacementArg::C => Placement::C,
            };
        }
        if let Some(a) = self.attention {
            cfg.generator.attention = match a {
                AttentionArg::Global => AttentionKind::Global,
                AttentionArg::Swin => AttentionKind::Swin,
            };
        }
        if let Some(m) = self.window {
            cfg.generator.window = m;
            cfg.discriminator.window = m;
        }
        if self.force_memory {
            cfg.generator.force_memory = true;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn train<T: Real>(cfg: TrainConfig, resume: Option<&Path>) -> Result<(), String> {
    let mut t = match resume {
        Some(p) => {
            let (ck, _) = load_checkpoint::<T>(p).map_err(|e| e.to_string())?;
            Trainer::resume(cfg, &ck).map_err(|e| e.to_string())?
        }
        None => Trainer::<T>::new(cfg).map_err(|e| e.to_string())?,
    };
    let em = t.run(|_, _| true).map_err(|e| e.to_string())?;
    for e in em {
        println!("{}", e.checkpoint.display());
        if let Some(s) = e.samples {
            println!("{}", s.display());
        }
        for r in e.reports {
            println!("{}", r.display());
        }
    }
    Ok(())
}

fn generate<T: Real>(ck_path: &Path, out: &Path, seed: Option<u64>, count: usize) -> Result<(), String> {
    let (ck, meta) = load_checkpoint::<T>(ck_path).map_err(|e| e.to_string())?;
    let mut cfg = meta.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut models = build_models::<T>(&cfg).map_err(|e| e.to_string())?;
    ck.group("generator_ema").and_then(|g| g.load_into(&mut models.gs)).map_err(|e| e.to_string())?;
    let (z, labels) = sample_inputs::<T>(&cfg, models.g.spec.latent_dim, count.max(1));
    let img = models.g.generate(&models.gs, &z, labels.as_deref()).map_err(|e| e.to_string())?;
    save_grid(&img, out).map_err(|e| e.to_string())?;
    println!("{}", out.display());
    Ok(())
}

fn diagnose_ck<T: Real>(ck_path: &Path, out: &Path, seed: Option<u64>, count: usize) -> Result<(), String> {
    let (ck, meta) = load_checkpoint::<T>(ck_path).map_err(|e| e.to_string())?;
    let mut cfg = meta.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut models = build_models::<T>(&cfg).map_err(|e| e.to_string())?;
    ck.group("generator").and_then(|g| g.load_into(&mut models.gs)).map_err(|e| e.to_string())?;
    ck.group("discriminator").and_then(|g| g.load_into(&mut models.ds)).map_err(|e| e.to_string())?;
    let (z, labels) = sample_inputs::<T>(&cfg, models.g.spec.latent_dim, count.max(1));
    let rep = diagnose(&models, &z, labels.as_deref()).map_err(|e| e.to_string())?;
    for p in rep.write(out).map_err(|e| e.to_string())? {
        println!("{}", p.display());
    }
    Ok(())
}

fn checkpoint_dtype(path: &Path) -> Result<DType, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    peek_dtype(&bytes).ok_or_else(|| format!("{} is not a checkpoint", path.display()))
}

fn run_gradcheck() -> Result<(), String> {
    let results = gradsuite::full_suite().map_err(|e| e.to_string())?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<40} seeds {:>2} checked {:>6} max rel err {:.3e} {}",
            r.name,
            r.seeds,
            r.report.checked,
            r.report.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if let (false, Some(w)) = (r.passed(), r.report.worst) {
            println!("  worst: input {} index {} analytic {:e} numeric {:e}", w.input, w.index, w.analytic, w.numeric);
        }
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(format!("{failed} gradient checks exceed {:e}", gradsuite::TOLERANCE));
    }
    Ok(())
}

fn run_census(cfg: &TrainConfig) -> Result<(), String> {
    let models = build_models::<f32>(cfg).map_err(|e| e.to_string())?;
    for (name, store) in [("generator", &models.gs), ("discriminator", &models.ds)] {
        let c = census(store);
        println!("{name} total {}", c.total);
        for (k, v) in &c.groups {
            println!("  {k:<24} {v}");
        }
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train { cfg, out, resume } => {
            let mut c = cfg.resolve()?;
            if let Some(o) = out {
                c.output.dir = o;
            }
            match c.precision {
                Precision::F32 => train::<f32>(c, resume.as_deref()),
                Precision::F64 => train::<f64>(c, resume.as_deref()),
            }
        }
        Command::Generate { checkpoint, out, seed, count } => {
            let seed = env_seed()?.or(seed);
            match checkpoint_dtype(&checkpoint)? {
                DType::F32 => generate::<f32>(&checkpoint, &out, seed, count),
                DType::F64 => generate::<f64>(&checkpoint, &out, seed, count),
            }
        }
        Command::Diagnose { checkpoint, out, seed, count } => {
            let seed = env_seed()?.or(seed);
            match checkpoint_dtype(&checkpoint)? {
                DType::F32 => diagnose_ck::<f32>(&checkpoint, &out, seed, count),
                DType::F64 => diagnose_ck::<f64>(&checkpoint, &out, seed, count),
            }
        }
        Command::Gradcheck => run_gradcheck(),
        Command::Census { cfg } => run_census(&cfg.resolve()?),
    }
}

/// Parses `argv` and runs it: 0 on success, 2 on usage errors, 1 on failures.
pub fn main_with<I, S>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
