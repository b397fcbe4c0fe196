mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::bytes;
use wingan_train::trainer::load_checkpoint;

fn wingan(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wingan"));
    cmd.args(args).env("RUST_LOG", "warn");
    match seed_env {
        Some(s) => cmd.env("STRANS_SEED", s),
        None => cmd.env_remove("STRANS_SEED"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "seed = 1\nsteps = 2\nbatch_size = 2\nprecision = \"f64\"\n{extra}\n[dataset]\nresolution = 16\n\n[generator]\nchannels = 16\nlatent_dim = 16\n\n[discriminator]\nchannels = 16\n\n[output]\nevery = 0\ngrid = 4\n"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(wingan(&["train", "--no-such-flag"], None).status.code(), Some(2));
    assert_eq!(wingan(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(wingan(&["--help"], None).status.code(), Some(0));
}

#[test]
fn missing_files_are_runtime_errors() {
    let out = wingan(&["generate", "--checkpoint", "/nonexistent.wgck", "--out", "/tmp/x.png"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_then_generate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let r = wingan(&["train", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let ck = out.join("ckpt_000002.wgck");
    assert!(ck.exists() && out.join("samples_000002.png").exists());
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    for p in [&a, &b] {
        let g = wingan(&["generate", "--checkpoint", ck.to_str().unwrap(), "--out", p.to_str().unwrap(), "--seed", "9", "--count", "4"], None);
        assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    }
    assert_eq!(bytes(&a), bytes(&b));
    let c = dir.path().join("c.png");
    wingan(&["generate", "--checkpoint", ck.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "10", "--count", "4"], None);
    assert_ne!(bytes(&a), bytes(&c));

    let rep = dir.path().join("report");
    let d = wingan(&["diagnose", "--checkpoint", ck.to_str().unwrap(), "--out", rep.to_str().unwrap()], None);
    assert!(d.status.success(), "{}", String::from_utf8_lossy(&d.stderr));
    for f in ["norm_ratio_g.csv", "norm_ratio_d.csv", "attention_distance_g.csv", "attention_distance_d.csv", "argmax_g.json"] {
        assert!(rep.join(f).exists(), "{f}");
    }
}

#[test]
fn environment_seed_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let r = wingan(&["train", "--config", &cfg, "--steps", "0", "--seed", "5", "--out", out.to_str().unwrap()], Some("7"));
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let (ck, meta) = load_checkpoint::<f64>(&out.join("ckpt_000000.wgck")).unwrap();
    assert_eq!((meta.config.seed, ck.rng.seed), (7, 7));
    let r = wingan(&["train", "--config", &cfg, "--steps", "0", "--seed", "5", "--out", out.to_str().unwrap()], None);
    assert!(r.status.success());
    assert_eq!(load_checkpoint::<f64>(&out.join("ckpt_000000.wgck")).unwrap().1.config.seed, 5);
    assert_eq!(wingan(&["census"], Some("seven")).status.code(), Some(1));
}

#[test]
fn large_global_attention_needs_force_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("resolution = 16", "resolution = 64");
    std::fs::write(&cfg, text).unwrap();
    let refused = wingan(&["census", "--config", &cfg, "--attention", "global"], None);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("force_memory"));
    let forced = wingan(&["census", "--config", &cfg, "--attention", "global", "--force-memory"], None);
    assert!(forced.status.success(), "{}", String::from_utf8_lossy(&forced.stderr));
    assert!(wingan(&["census", "--config", &cfg], None).status.success());
}

#[test]
fn gradcheck_passes() {
    let out = wingan(&["gradcheck"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
