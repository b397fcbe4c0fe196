//! Acceptance suite: one line per criterion. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 2 5`.

#[path = "../../core/tests/common/mod.rs"]
#[allow(dead_code)]
mod oracle;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use oracle::{attention, captured_block, closed_form, input_jacobian_row, max_diff, randomize, rng, windowed_oracle};
use wingan_core::attention::{attention_op_count, global_msa, sw_msa, w_msa, AttentionConfig};
use wingan_core::blocks::{AdaNorm, BlockOptions, NormKind, Placement, TransformerBlock};
use wingan_core::diagnostics::{
    attention_distance, attention_distances, histograms_from_csv, histograms_to_csv, ArgmaxMap, AttnLayout,
    CapturedAttention, DistanceMode, NormRatioTrace, TapRecord,
};
use wingan_core::networks::{census, Generator, GeneratorSpec};
use wingan_core::nn::{Builder, Ctx};
use wingan_tensor::{ParamStore, Tape, Tensor};
use wingan_train::config::{Precision, TrainConfig};
use wingan_train::data::{channel_stats, classify_by_colour, ChannelStats, Dataset};
use wingan_train::gradsuite;
use wingan_train::report::diagnose;
use wingan_train::trainer::load_checkpoint;
use wingan_train::Trainer;

struct Outcome {
    pass: bool,
    detail: String,
    soft: Option<(bool, String)>,
}

fn hard(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
        soft: None,
    }
}

type Check = fn() -> Outcome;

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let all: [(usize, &str, Check); 11] = [
        (1, "finite-difference gradients", c1_gradients),
        (2, "window attention oracles", c2_window_oracles),
        (3, "attention op counts", c3_op_counts),
        (4, "window gradient locality", c4_locality),
        (5, "attention distance bounds", c5_distance),
        (6, "generator census", c6_census),
        (7, "block identities", c7_identities),
        (8, "norm ratio and report roundtrips", c8_reports),
        (9, "unconditional training smoke", c9_unconditional),
        (10, "conditional training smoke", c10_conditional),
        (11, "determinism and resume", c11_determinism),
    ];
    let mut failed = 0;
    for (n, name, f) in all {
        if !picked.is_empty() && !picked.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {n:>2} {} {name}: {} ({secs:.1}s)", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        if let Some((ok, d)) = out.soft {
            println!("criterion {n:>2} soft {} {d}", if ok { "PASS" } else { "FAIL" });
        }
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let results = match gradsuite::full_suite() {
        Ok(r) => r,
        Err(e) => return hard(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let worst = results.iter().map(|r| r.report.max_rel_err).fold(0.0, f64::max);
    let bad: Vec<_> = results.iter().filter(|r| !r.passed() || r.seeds < 10).map(|r| r.name.clone()).collect();
    let has_block = results.iter().any(|r| r.name.contains("conditional window pair"));
    hard(
        bad.is_empty() && has_block && elapsed < Duration::from_secs(120),
        format!("{} cases x 10 seeds, worst rel err {worst:.2e}, {:.1}s, failing {bad:?}", results.len(), elapsed.as_secs_f64()),
    )
}

fn run_attn(cfg: AttentionConfig, grid: (usize, usize), seed: u64, x: &Tensor<f64>) -> Vec<f64> {
    let (attn, store) = attention(cfg, grid, seed);
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store);
    let xv = tape.constant(x.clone());
    let out = match (cfg.window, cfg.shifted) {
        (None, _) => global_msa(&ctx, &attn, xv, grid, false),
        (Some(_), false) => w_msa(&ctx, &attn, xv, grid, false),
        (Some(_), true) => sw_msa(&ctx, &attn, xv, grid, false),
    };
    out.unwrap().out.value().data().to_vec()
}

fn c2_window_oracles() -> Outcome {
    let mut full = 0.0f64;
    for seed in 0..20 {
        for side in [4, 8] {
            let g = AttentionConfig::global(8, 2);
            let mut w = AttentionConfig::windowed(8, 2, side, false);
            w.rel_bias = g.rel_bias;
            let x = Tensor::randn(&[2, side * side, 8], 1.0, &mut rng(600 + seed));
            full = full.max(max_diff(&run_attn(g, (side, side), seed, &x), &run_attn(w, (side, side), seed, &x)));
        }
    }
    let mut shifted = 0.0f64;
    let cfg = AttentionConfig::windowed(8, 2, 4, true);
    for seed in 0..20 {
        let x = Tensor::randn(&[1, 64, 8], 1.0, &mut rng(700 + seed));
        shifted = shifted.max(max_diff(&run_attn(cfg, (8, 8), seed, &x), &windowed_oracle(cfg, (8, 8), seed, &x)));
    }
    hard(full < 1e-12 && shifted < 1e-10, format!("M=H=W vs global {full:.1e}, sw_msa 8x8 M=4 vs enumeration {shifted:.1e} over 20 seeds"))
}

fn measured_macs(cfg: AttentionConfig, side: usize) -> u64 {
    let (attn, store) = attention(cfg, (side, side), 0);
    let tape = Tape::<f64>::inference();
    let ctx = Ctx::new(&tape, &store);
    attn.forward(&ctx, tape.constant(Tensor::zeros(&[1, side * side, cfg.dim])), (side, side), false).unwrap();
    tape.counters().score_macs
}

fn c3_op_counts() -> Outcome {
    let g = AttentionConfig::global(16, 4);
    let w = AttentionConfig::windowed(16, 4, 4, false);
    let s = AttentionConfig::windowed(16, 4, 4, true);
    let mut notes = Vec::new();
    let mut ok = true;
    for side in [16, 32, 64] {
        let (cg, cw) = (attention_op_count(&g, side, side), attention_op_count(&w, side, side));
        // heads · head_dim = 16; N = side², windows hold 16 tokens.
        let n = (side * side) as u64;
        ok &= cg == 16 * n * n && cw == 16 * n * 16;
        ok &= attention_op_count(&s, side, side) == cw;
    }
    let growth_w = attention_op_count(&w, 32, 32) / attention_op_count(&w, 16, 16);
    let growth_g = attention_op_count(&g, 32, 32) / attention_op_count(&g, 16, 16);
    ok &= growth_w == 4 && growth_g == 16;
    notes.push(format!("doubling the side: windowed x{growth_w}, global x{growth_g}"));
    for side in [16, 32] {
        for cfg in [g, w, s] {
            let m = measured_macs(cfg, side);
            ok &= m == attention_op_count(&cfg, side, side);
        }
    }
    notes.push("measured counts equal the formula at 16² and 32²".into());
    hard(ok, notes.join("; "))
}

fn c4_locality() -> Outcome {
    let window_of = |p: usize| ((p / 8) / 4, (p % 8) / 4);
    let w = AttentionConfig::windowed(8, 2, 4, false);
    let sw = AttentionConfig::windowed(8, 2, 4, true);
    let mut leaked = 0;
    for q in 0..64 {
        let row = input_jacobian_row(&[w], (8, 8), q, 41);
        leaked += (0..64).filter(|&k| window_of(k) != window_of(q) && row[k] != 0.0).count();
    }
    let mut cross = 0.0f64;
    for q in [0usize, 27, 36, 63] {
        let row = input_jacobian_row(&[w, sw], (8, 8), q, 41);
        cross = cross.max((0..64).filter(|&k| window_of(k) != window_of(q)).map(|k| row[k]).fold(0.0, f64::max));
    }
    hard(leaked == 0 && cross > 1e-8, format!("W-MSA nonzero cross-window grads {leaked}; after W then SW max cross-window grad {cross:.2e}"))
}

fn c5_distance() -> Outcome {
    let bound = 3.0 * 2f64.sqrt();
    let mut worst = 0.0f64;
    let mut samples = 0;
    for shifted in [false, true] {
        for seed in 0..5 {
            let cap = captured_block(AttentionConfig::windowed(8, 2, 4, shifted), (8, 8), 50 + seed);
            for mode in [DistanceMode::Weighted, DistanceMode::Argmax] {
                for (_, d) in attention_distances(&cap, mode) {
                    worst = worst.max(d);
                    samples += 1;
                }
            }
        }
    }
    let n = 16;
    let cap = CapturedAttention::new("A1".into(), (4, 4), 1, AttnLayout::Global, &Tensor::<f64>::full(&[1, 1, n, n], 1.0 / n as f64)).unwrap();
    let mut total = 0.0;
    for q in 0..n {
        for k in 0..n {
            let (dy, dx) = ((q / 4) as f64 - (k / 4) as f64, (q % 4) as f64 - (k % 4) as f64);
            total += (dy * dy + dx * dx).sqrt();
        }
    }
    let expect = total / (n * n) as f64;
    let mean = attention_distance(&cap, DistanceMode::Weighted).mean;
    hard(
        worst <= bound + 1e-12 && (mean - expect).abs() < 1e-10,
        format!("{samples} windowed samples, max {worst:.4} <= {bound:.4}; uniform 4x4 mean {mean:.12} vs {expect:.12}"),
    )
}

fn c6_census() -> Outcome {
    let spec = GeneratorSpec::strans(64, 512).unwrap();
    let (g, store) = Generator::build::<f32, _>(&spec, &mut rng(0)).unwrap();
    let stages = [(512, 2, false), (512, 2, false), (512, 2, true), (512, 2, true), (128, 2, true)];
    let expect = closed_form(512, 512, &stages, 4, 4);
    let cen = census(&store);
    let z = Tensor::randn(&[2, 512], 1.0, &mut rng(1));
    let shape = g.generate(&store, &z, None).unwrap().shape().to_vec();
    hard(
        cen.total == expect && cen.groups.values().sum::<usize>() == cen.total && shape == [2, 64, 64, 3],
        format!("{} trainable parameters (closed form {expect}), output {shape:?}", cen.total),
    )
}

fn block(opt: BlockOptions, grid: (usize, usize), seed: u64, std: Option<f64>) -> (TransformerBlock, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let blk = {
        let mut b = Builder::new(&mut store, &mut r);
        TransformerBlock::build(&mut b, "blk", 1, grid, opt).unwrap()
    };
    if let Some(s) = std {
        randomize(&mut store, &mut r, s);
    }
    (blk, store)
}

fn forward_block(blk: &TransformerBlock, store: &ParamStore<f64>, x: &Tensor<f64>, cond: Option<&Tensor<f64>>) -> Tensor<f64> {
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, store);
    let c = cond.map(|c| tape.constant(c.clone()));
    blk.forward(&ctx, tape.constant(x.clone()), c).unwrap().value()
}

fn c7_identities() -> Outcome {
    let x = Tensor::randn(&[2, 16, 8], 1.0, &mut rng(80));
    let attn = AttentionConfig::windowed(8, 2, 2, true);

    // Rescaling (w, c) to (w/k, k·c) leaves outputs unchanged and scales stored grads by c.
    let (base, bstore) = block(BlockOptions::discriminator(attn, 1.0, true), (4, 4), 81, Some(0.3));
    let (scaled, mut sstore) = block(BlockOptions::discriminator(attn, 0.1, true), (4, 4), 82, None);
    for (_, p) in bstore.iter() {
        let sid = sstore.id(&p.name).unwrap();
        let k = p.lr_scale / sstore.get(sid).lr_scale;
        sstore.set_value(sid, Tensor::from_fn(p.value.shape(), |i| p.value.data()[i] * k));
    }
    let grads = |blk: &TransformerBlock, store: &ParamStore<f64>| {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let y = blk.forward(&ctx, tape.constant(x.clone()), None).unwrap();
        let w = Tensor::from_fn(&y.shape(), |i| (0.37 * i as f64).cos());
        let v = y.value();
        (v, y.mul(tape.constant(w)).unwrap().sum().unwrap().backward().unwrap().into_params())
    };
    let (yb, gb) = grads(&base, &bstore);
    let (ys, gs) = grads(&scaled, &sstore);
    let eqlr_fwd = max_diff(yb.data(), ys.data());
    let mut eqlr_grad = 0.0f64;
    for (id, p) in bstore.iter().filter(|(_, p)| p.trainable) {
        let sid = sstore.id(&p.name).unwrap();
        let ratio = sstore.get(sid).lr_scale / p.lr_scale;
        let expect: Vec<f64> = gb[&id].data().iter().map(|g| g * ratio).collect();
        eqlr_grad = eqlr_grad.max(max_diff(gs[&sid].data(), &expect));
    }

    // skip_proj at its identity init reproduces the plain shortcut exactly.
    let (plain, ps) = block(BlockOptions::discriminator(attn, 0.1, false), (4, 4), 83, None);
    let (proj, qs) = block(BlockOptions::discriminator(attn, 0.1, true), (4, 4), 83, None);
    let skip_exact = forward_block(&plain, &ps, &x, None).data() == forward_block(&proj, &qs, &x, None).data();

    // Identity modulation equals the base norm.
    let cond = Tensor::randn(&[2, 4], 1.0, &mut rng(84));
    let mut ada_err = 0.0f64;
    for kind in [NormKind::Layer, NormKind::Instance, NormKind::Batch] {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng(85);
        let a = {
            let mut b = Builder::new(&mut store, &mut r);
            AdaNorm::build(&mut b, "ada", 8, 4, kind).unwrap()
        };
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store).training();
        let xv = tape.constant(x.clone());
        let y = a.forward(&ctx, xv, tape.constant(cond.clone())).unwrap().value();
        let n = a.normalize(&ctx, xv).unwrap().value();
        ada_err = ada_err.max(max_diff(y.data(), n.data()));
    }

    // Placement C equals B on windowed blocks.
    let x8 = Tensor::randn(&[2, 64, 8], 1.0, &mut rng(86));
    let mut cb = true;
    for shifted in [false, true] {
        let a = AttentionConfig::windowed(8, 2, 4, shifted);
        let (b, bs) = block(BlockOptions::generator(a).conditional(Placement::B, NormKind::Instance, 4), (8, 8), 87, Some(0.5));
        let (c, cs) = block(BlockOptions::generator(a).conditional(Placement::C, NormKind::Instance, 4), (8, 8), 87, Some(0.5));
        cb &= forward_block(&b, &bs, &x8, Some(&cond)).data() == forward_block(&c, &cs, &x8, Some(&cond)).data();
    }
    hard(
        eqlr_fwd < 1e-12 && eqlr_grad < 1e-10 && skip_exact && ada_err < 1e-12 && cb,
        format!("EqLR fwd {eqlr_fwd:.1e} grad {eqlr_grad:.1e}; skip_proj exact {skip_exact}; AdaNorm {ada_err:.1e}; C==B windowed {cb}"),
    )
}

fn c8_reports() -> Outcome {
    let x = Tensor::<f64>::randn(&[2, 16, 8], 1.0, &mut rng(90));
    let mut ratio_ok = true;
    let mut ratios = Vec::new();
    for alpha in [0.5, 1.0, 2.0] {
        let branch = Tensor::from_fn(x.shape(), |i| alpha * x.data()[i]);
        let r = TapRecord::new("A1".into(), (4, 4), &x, &branch).ratio();
        ratio_ok &= (r - 1.0 / alpha).abs() < 1e-12;
        ratios.push(format!("{r:.6}"));
    }
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::default();
    cfg.dataset.resolution = 16;
    cfg.generator.channels = 16;
    cfg.generator.latent_dim = 16;
    cfg.discriminator.channels = 16;
    cfg.output.dir = dir.path().to_path_buf();
    let t = Trainer::<f64>::new(cfg).unwrap();
    let rep = diagnose(&t.models, &t.sample_z, None).unwrap();
    rep.write(dir.path()).unwrap();
    let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
    let trace_ok = NormRatioTrace::from_csv(&read("norm_ratio_g.csv")).ok() == Some(rep.generator_trace.clone())
        && NormRatioTrace::from_csv(&read("norm_ratio_d.csv")).ok() == Some(rep.discriminator_trace.clone());
    let hist_ok = histograms_from_csv(&read("attention_distance_g.csv")).map(|h| histograms_to_csv(&h)).ok() == Some(read("attention_distance_g.csv"));
    let json: std::collections::BTreeMap<String, ArgmaxMap> = serde_json::from_str(&read("argmax_g.json")).unwrap();
    let json_ok = json == rep.argmax && !json.is_empty();
    let one = rep.argmax.values().next().unwrap();
    let single_ok = ArgmaxMap::from_json(&one.to_json().unwrap()).ok().as_ref() == Some(one);
    hard(
        ratio_ok && trace_ok && hist_ok && json_ok && single_ok,
        format!("ratios {ratios:?} for alpha 0.5/1/2; CSV {trace_ok} histograms {hist_ok} JSON {}", json_ok && single_ok),
    )
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// The desk-scale SHAPES configuration shared by the training criteria.
fn desk(seed: u64, dir: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::load(&config_dir().join("acceptance_shapes.toml")).unwrap();
    cfg.seed = seed;
    cfg.output.dir = dir.to_path_buf();
    cfg
}

const STAT_GAP: f64 = 0.15;
const STAT_SAMPLES: u64 = 512;
const CHECK_EVERY: u64 = 50;
/// Step budget of each early-stopped shortcut comparison run.
const SOFT_STEPS: u64 = 1000;

fn sample_stats(t: &Trainer<f32>) -> ChannelStats {
    channel_stats(t.samples().unwrap().data())
}

/// Trains and returns the first checked step at which the sample statistics
/// came within the gap, the final gap and whether the run finished.
fn train_to_stats(cfg: TrainConfig, stop_at_threshold: bool) -> (Option<u64>, f64, Result<(), String>) {
    let target = Dataset::new(&cfg.dataset, cfg.seed).unwrap().stats(STAT_SAMPLES);
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    let mut reached = None;
    let mut gap = f64::INFINITY;
    let res = t.run(|t, _| {
        if t.step % CHECK_EVERY != 0 && t.step != t.cfg.steps {
            return true;
        }
        gap = sample_stats(t).max_gap(&target);
        if gap <= STAT_GAP && reached.is_none() {
            reached = Some(t.step);
        }
        !(stop_at_threshold && reached.is_some())
    });
    (reached, gap, res.map(|_| ()).map_err(|e| e.to_string()))
}

fn c9_unconditional() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(0, dir.path());
    let steps = cfg.steps;
    let start = Instant::now();
    let (_, gap, res) = train_to_stats(cfg.clone(), false);
    let elapsed = start.elapsed();
    let pass = res.is_ok() && gap <= STAT_GAP && elapsed < Duration::from_secs(30 * 60);
    let detail = format!(
        "{steps} steps in {:.0}s, {}, final channel gap {gap:.3} (limit {STAT_GAP})",
        elapsed.as_secs_f64(),
        res.as_ref().err().map_or("no divergence".to_string(), |e| e.clone())
    );

    let budget = SOFT_STEPS;
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 1..=3 {
        let steps_for = |skip: bool| {
            let d = tempfile::tempdir().unwrap();
            let mut c = desk(seed, d.path());
            c.discriminator.skip_proj = skip;
            c.steps = budget;
            c.output.every = 0;
            train_to_stats(c, true).0
        };
        let (with, without) = (steps_for(true), steps_for(false));
        let win = match (with, without) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        wins += usize::from(win);
        notes.push(format!("seed {seed}: skip_proj {} vs identity {}", fmt_steps(with), fmt_steps(without)));
    }
    Outcome {
        pass,
        detail,
        soft: Some((wins >= 2, format!("skip_proj no slower in {wins}/3 seeds ({})", notes.join(", ")))),
    }
}

fn fmt_steps(s: Option<u64>) -> String {
    s.map_or("never".into(), |s| s.to_string())
}

/// Share of fixed conditional samples whose colour-rule class matches the request.
fn agreement(t: &Trainer<f32>) -> f64 {
    let img = t.samples().unwrap();
    let labels = t.sample_labels.as_ref().unwrap();
    let per = img.numel() / labels.len();
    let k = t.cfg.classes().unwrap();
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| classify_by_colour(&img.data()[i * per..(i + 1) * per], k) == Some(l))
        .count();
    hits as f64 / labels.len() as f64
}

fn conditional_run(seed: u64, placement: Placement) -> (f64, Result<(), String>) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk(seed, dir.path());
    cfg.conditional.enabled = true;
    cfg.conditional.placement = placement;
    cfg.conditional.norm = NormKind::Instance;
    cfg.steps = COND_STEPS;
    cfg.output.every = 0;
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    let res = t.run(|_, _| true).map(|_| ()).map_err(|e| e.to_string());
    (agreement(&t), res)
}

/// Budget at which the placements still differ; both saturate by 1000 steps.
const COND_STEPS: u64 = 500;

fn c10_conditional() -> Outcome {
    let mut c_scores = Vec::new();
    let mut wins = 0;
    let mut notes = Vec::new();
    let mut errors = Vec::new();
    for seed in 0..3 {
        let (c, rc) = conditional_run(seed, Placement::C);
        let (a, ra) = conditional_run(seed, Placement::A);
        errors.extend(rc.err());
        errors.extend(ra.err());
        wins += usize::from(a < c);
        notes.push(format!("seed {seed}: C {:.0}% vs A {:.0}%", 100.0 * c, 100.0 * a));
        c_scores.push(c);
    }
    Outcome {
        pass: c_scores[0] > 0.8 && errors.is_empty(),
        detail: format!("CONFIG_C agreement {:.1}% after {COND_STEPS} steps {errors:?}", 100.0 * c_scores[0]),
        soft: Some((wins >= 2, format!("CONFIG_A strictly lower in {wins}/3 seeds ({})", notes.join(", ")))),
    }
}

fn c11_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = desk(5, &root.path().join("run"));
    cfg.precision = Precision::F64;
    cfg.batch_size = 4;
    cfg.steps = 6;
    cfg.output.every = 3;
    cfg.output.grid = 4;
    let files = ["ckpt_000003.wgck", "ckpt_000006.wgck", "samples_000003.png", "samples_000006.png"];
    let read_all = |dir: &Path| files.map(|f| std::fs::read(dir.join(f)).unwrap_or_default());

    let run = root.path().join("run");
    let mut outputs = Vec::new();
    for i in 0..2 {
        Trainer::<f64>::new(cfg.clone()).unwrap().run(|_, _| true).unwrap();
        let keep = root.path().join(format!("copy{i}"));
        std::fs::rename(&run, &keep).unwrap();
        outputs.push(read_all(&keep));
    }
    let identical = outputs[0] == outputs[1] && outputs[0].iter().all(|b| !b.is_empty());

    // Resume from the step-3 checkpoint with fresh processes' worth of state.
    let (ck, _) = load_checkpoint::<f64>(&root.path().join("copy0/ckpt_000003.wgck")).unwrap();
    let mut r = Trainer::<f64>::resume(cfg.clone(), &ck).unwrap();
    r.run(|_, _| true).unwrap();
    let resumed = read_all(&run);
    let resume_ok = resumed[1] == outputs[0][1] && resumed[3] == outputs[0][3];
    hard(identical && resume_ok, format!("two f64 runs byte-identical {identical}; resume at step 3 reproduces step 6 {resume_ok}"))
}
