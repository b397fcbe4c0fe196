mod common;

use std::collections::HashMap;

use common::{bytes, mini};
use wingan_core::nn::Ctx;
use wingan_tensor::{ParamStore, Tape, Tensor};
use wingan_train::gan::{discriminator_loss, gan_step, generator_loss};
use wingan_train::optim::{Adam, AdamConfig};
use wingan_train::trainer::{build_models, load_checkpoint};
use wingan_train::Trainer;

const ADAM: AdamConfig = AdamConfig {
    lr: 1e-3,
    beta1: 0.0,
    beta2: 0.99,
    eps: 1e-8,
};

#[test]
fn adam_first_step_moves_by_lr_times_sign() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::from_f64(&[4], &[0.5, -2.0, 3.0, 0.0]).unwrap(), 1.0).unwrap();
    let mut adam = Adam::new(&store, ADAM);
    let g = Tensor::from_f64(&[4], &[0.1, -5.0, 1e-3, -7e-2]).unwrap();
    adam.step(&mut store, &HashMap::from([(id, g.clone())]));
    for i in 0..4 {
        let expect = [0.5, -2.0, 3.0, 0.0][i] - ADAM.lr * g.data()[i].signum();
        assert!((store.value(id).data()[i] - expect).abs() < ADAM.lr * 1e-4, "entry {i}");
    }
}

#[test]
fn adam_zero_gradient_leaves_weights() {
    let mut store = ParamStore::<f64>::new();
    let w = Tensor::from_f64(&[3], &[0.25, -1.5, 4.0]).unwrap();
    let id = store.add("w", w.clone(), 1.0).unwrap();
    let mut adam = Adam::new(&store, ADAM);
    adam.step(&mut store, &HashMap::from([(id, Tensor::zeros(&[3]))]));
    adam.step(&mut store, &HashMap::new());
    assert_eq!(store.value(id).data(), w.data());
}

#[test]
fn adam_quadratic_trajectory_matches_the_recurrence() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::from_f64(&[1], &[1.3]).unwrap(), 1.0).unwrap();
    let cfg = AdamConfig { beta1: 0.5, ..ADAM };
    let mut adam = Adam::new(&store, cfg);
    let (mut w, mut m, mut v) = (1.3f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let grads = {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store);
            ctx.weight(id).unwrap().square().unwrap().sum().unwrap().backward().unwrap().into_params()
        };
        adam.step(&mut store, &grads);
        let g = 2.0 * w;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        assert!((store.value(id).item() - w).abs() < 1e-12, "step {t}");
    }
}

fn zero_critic(store: &mut ParamStore<f64>) {
    for name in ["head.fc2.weight", "head.fc2.bias"] {
        let id = store.id(name).unwrap();
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::zeros(&shape));
    }
}

#[test]
fn zero_critic_gives_log_two_losses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini(dir.path());
    let mut models = build_models::<f64>(&cfg).unwrap();
    zero_critic(&mut models.ds);
    let batch = Trainer::<f64>::new(cfg.clone()).unwrap().next_batch();
    let tape = Tape::new();
    let ctx_g = Ctx::new(&tape, &models.gs).training();
    let ctx_d = Ctx::new(&tape, &models.ds).frozen();
    let lg = generator_loss(&models, &ctx_g, &ctx_d, &batch.z_g, None).unwrap();
    assert!((lg.value().item() - 2f64.ln()).abs() < 1e-15);

    let fake = models.g.generate(&models.gs, &batch.z_d, None).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &models.ds);
    let (ld, stats) = discriminator_loss(&models.d, &ctx, &batch.real, &fake, None, None, &cfg.loss, false).unwrap();
    assert!((ld.value().item() - 2.0 * 2f64.ln()).abs() < 1e-15);
    assert_eq!((stats.d_real, stats.d_fake), (0.0, 0.0));
}

#[test]
fn zero_gamma_penalty_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini(dir.path());
    let models = build_models::<f64>(&cfg).unwrap();
    let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
    let batch = t.next_batch();
    let fake = models.g.generate(&models.gs, &batch.z_d, None).unwrap();
    let grads = |cfg: &wingan_train::config::LossConfig, penalty: bool| {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &models.ds).training();
        let (loss, stats) = discriminator_loss(&models.d, &ctx, &batch.real, &fake, None, None, cfg, penalty).unwrap();
        let g = loss.backward().unwrap().into_params();
        let mut v: Vec<_> = g.into_iter().map(|(id, t)| (id.0, t.data().to_vec())).collect();
        v.sort_by_key(|e| e.0);
        (v, stats)
    };
    cfg.loss.r1_gamma = 0.0;
    let (off, _) = grads(&cfg.loss, false);
    let (zero, stats) = grads(&cfg.loss, true);
    assert_eq!(off, zero);
    assert_eq!(stats.r1, 0.0);
    cfg.loss.r1_gamma = 1.0;
    let (on, stats) = grads(&cfg.loss, true);
    assert!(stats.r1 > 0.0);
    assert_ne!(off, on);
}

#[test]
fn one_step_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini(dir.path());
    let run = || {
        let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
        let s = t.train_step().unwrap();
        (s.loss_d.to_bits(), s.loss_g.to_bits(), t.checkpoint().to_bytes())
    };
    assert_eq!(run(), run());
}

#[test]
fn gan_step_updates_both_networks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini(dir.path());
    let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
    let batch = t.next_batch();
    let before = t.models.clone();
    gan_step(&mut t.models, &mut t.adam_g, &mut t.adam_d, &batch, &cfg.loss, true).unwrap();
    let moved = |a: &ParamStore<f64>, b: &ParamStore<f64>| a.trainable().zip(b.trainable()).any(|((_, p), (_, q))| p.value.data() != q.value.data());
    assert!(moved(&before.gs, &t.models.gs));
    assert!(moved(&before.ds, &t.models.ds));
    assert_eq!((t.adam_g.t, t.adam_d.t), (1, 1));
}

/// Replays the average from per-step snapshots of the live generator.
fn replay_average(beta: f64, snapshots: &[Vec<f64>]) -> Vec<f64> {
    let mut avg = snapshots[0].clone();
    for (t, live) in snapshots[1..].iter().enumerate() {
        let b = beta.min((1.0 + t as f64) / (10.0 + t as f64));
        for (a, l) in avg.iter_mut().zip(live) {
            *a = b * *a + (1.0 - b) * l;
        }
    }
    avg
}

fn flat(store: &ParamStore<f64>) -> Vec<f64> {
    store.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect()
}

#[test]
fn generator_average_follows_the_warmed_up_recurrence() {
    let dir = tempfile::tempdir().unwrap();
    for beta in [0.0, 0.5, 0.999] {
        let mut cfg = mini(dir.path());
        cfg.optim.ema_beta = beta;
        let mut t = Trainer::<f64>::new(cfg).unwrap();
        let mut snaps = vec![flat(&t.models.gs)];
        for _ in 0..4 {
            t.train_step().unwrap();
            snaps.push(flat(&t.models.gs));
        }
        let want = replay_average(beta, &snaps);
        let got = flat(&t.g_ema);
        let err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "beta {beta}: {err}");
        if beta == 0.0 {
            assert_eq!(got, *snaps.last().unwrap());
        }
    }
}

#[test]
fn samples_come_from_the_average() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::<f64>::new(mini(dir.path())).unwrap();
    t.train_step().unwrap();
    let avg = t.models.g.generate(&t.g_ema, &t.sample_z, None).unwrap();
    let live = t.models.g.generate(&t.models.gs, &t.sample_z, None).unwrap();
    let s = t.samples().unwrap();
    assert_eq!(s.data(), avg.data());
    assert_ne!(s.data(), live.data());
}

#[test]
fn zero_steps_emit_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini(dir.path());
    cfg.steps = 0;
    let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
    let em = t.run(|_, _| true).unwrap();
    assert_eq!(em.len(), 1);
    assert!(em[0].samples.is_none());
    let mut files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["ckpt_000000.wgck", "latest.wgck"]);
    let (ck, meta) = load_checkpoint::<f64>(&em[0].checkpoint).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(meta.config, cfg);
    let fresh = build_models::<f64>(&cfg).unwrap();
    let mut gs = fresh.gs.clone();
    ck.group("generator").unwrap().load_into(&mut gs).unwrap();
    assert!(gs.iter().zip(fresh.gs.iter()).all(|((_, a), (_, b))| a.value.data() == b.value.data()));
}

#[test]
fn resume_continues_the_same_trajectory() {
    for (s, k) in [(1u64, 2u64), (2, 1), (3, 2)] {
        let root = tempfile::tempdir().unwrap();
        let run = root.path().join("run");
        let mut cfg = mini(&run);
        cfg.steps = s + k;
        Trainer::<f64>::new(cfg.clone()).unwrap().run(|_, _| true).unwrap();
        let straight = root.path().join("straight");
        std::fs::rename(&run, &straight).unwrap();

        let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
        for _ in 0..s {
            t.train_step().unwrap();
        }
        let ck = t.checkpoint();
        drop(t);
        let mut r = Trainer::<f64>::resume(cfg, &ck).unwrap();
        assert_eq!(r.step, s);
        r.run(|_, _| true).unwrap();
        for name in [format!("ckpt_{:06}.wgck", s + k), format!("samples_{:06}.png", s + k)] {
            assert!(bytes(&straight.join(&name)) == bytes(&run.join(&name)), "s={s} k={k}: {name}");
        }
    }
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini(dir.path());
    let ck = Trainer::<f64>::new(cfg.clone()).unwrap().checkpoint();
    let mut other = cfg.clone();
    other.optim.lr_g *= 2.0;
    assert!(Trainer::<f64>::resume(other, &ck).is_err());
    // Run length and output location do not shape the trajectory.
    let mut longer = cfg;
    longer.steps = 100;
    longer.output.dir = dir.path().join("elsewhere");
    assert!(Trainer::<f64>::resume(longer, &ck).is_ok());
}

#[test]
fn equalized_rate_scales_the_first_effective_update() {
    let dir = tempfile::tempdir().unwrap();
    let mut scaled = mini(dir.path());
    scaled.discriminator.eqlr_scale = 0.1;
    let mut plain = scaled.clone();
    plain.discriminator.eqlr_scale = 1.0;
    let first = |cfg: &wingan_train::TrainConfig| {
        let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
        let before = t.models.ds.clone();
        t.train_step().unwrap();
        (before, t.models.ds.clone())
    };
    let (b1, a1) = first(&scaled);
    let (b0, a0) = first(&plain);
    let mut checked = 0;
    // Transformer parameters are the ones whose runtime scale follows the setting.
    for (id, p) in a1.iter().filter(|(_, p)| p.trainable && p.lr_scale != a0.get(a0.id(&p.name).unwrap()).lr_scale) {
        let q = a0.get(a0.id(&p.name).unwrap());
        let eff = |s: &ParamStore<f64>, id| -> Vec<f64> { s.value(id).data().iter().map(|v| v * s.get(id).lr_scale).collect() };
        let (s0, s1) = (eff(&b1, id), eff(&a1, id));
        let qid = a0.id(&q.name).unwrap();
        let (t0, t1) = (eff(&b0, qid), eff(&a0, qid));
        // Same effective starting point.
        assert!(s0.iter().zip(&t0).all(|(x, y)| (x - y).abs() < 1e-12), "{}", p.name);
        for i in 0..s0.len() {
            let (du, dp) = (s1[i] - s0[i], t1[i] - t0[i]);
            // Tiny gradients feel Adam's epsilon more in the scaled run.
            let lr = plain.optim.lr_d;
            if dp.abs() > 0.999 * lr {
                assert!((du / dp - 0.1).abs() < 1e-3, "{} [{i}]: {du} vs {dp}", p.name);
                checked += 1;
            } else if dp.abs() > 0.1 * lr {
                // First Adam step: |Δ| = lr·|g|/(|g|+eps), so invert for |g|.
                let (r, eps) = (dp.abs() / lr, plain.optim.eps);
                let g = 0.1 * r * eps / (1.0 - r);
                let predict = 0.1 * lr * g / (g + eps) * dp.signum();
                assert!((du - predict).abs() < 1e-3 * predict.abs(), "{} [{i}]: {du} vs {predict}", p.name);
            }
        }
    }
    assert!(checked > 100, "{checked}");
}
