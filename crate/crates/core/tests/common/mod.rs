#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wingan_core::attention::{Attention, AttentionConfig};
use wingan_core::blocks::{BlockOptions, TransformerBlock};
use wingan_core::diagnostics::CapturedAttention;
use wingan_core::nn::{Builder, Ctx, Role};
use wingan_tensor::{ParamStore, Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Overwrites every trainable parameter with `N(0, std²)` so that tests do
/// not depend on the (near-zero) production init.
pub fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, std: f64) {
    let ids: Vec<_> = store.trainable().map(|(id, _)| id).collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::randn(&shape, std, rng));
    }
}

pub fn attention(cfg: AttentionConfig, grid: (usize, usize), seed: u64) -> (Attention, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let attn = {
        let mut b = Builder::new(&mut store, &mut r);
        Attention::build(&mut b, "attn", cfg, grid, Role::Generator).unwrap()
    };
    randomize(&mut store, &mut r, 0.5);
    (attn, store)
}

/// Effective (runtime-scaled) parameter values.
pub fn eff(store: &ParamStore<f64>, id: wingan_tensor::ParamId) -> Vec<f64> {
    let p = store.get(id);
    p.value.data().iter().map(|v| v * p.lr_scale).collect()
}

/// Direct per-query attention: for query `q` only the keys in `allowed(q)`
/// take part, with additive logit `bias(head, q, k)`.
pub fn oracle_attention(
    x: &[f64],
    n: usize,
    attn: &Attention,
    store: &ParamStore<f64>,
    allowed: &dyn Fn(usize) -> Vec<usize>,
    bias: &dyn Fn(usize, usize, usize) -> f64,
) -> (Vec<f64>, Vec<Vec<Vec<(usize, f64)>>>) {
    let c = attn.cfg.dim;
    let heads = attn.cfg.num_heads;
    let d = c / heads;
    let wqkv = eff(store, attn.qkv.w);
    let bqkv = eff(store, attn.qkv.b.unwrap());
    let wp = eff(store, attn.proj.w);
    let bp = eff(store, attn.proj.b.unwrap());
    // qkv[t][col], col = which·C + head·d + j.
    let qkv: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            (0..3 * c)
                .map(|col| bqkv[col] + (0..c).map(|i| x[t * c + i] * wqkv[i * 3 * c + col]).sum::<f64>())
                .collect()
        })
        .collect();
    let mut out = vec![0.0; n * c];
    let mut weights = vec![vec![Vec::new(); n]; heads];
    for q in 0..n {
        let keys = allowed(q);
        let mut mixed = vec![0.0; c];
        for h in 0..heads {
            let logits: Vec<f64> = keys
                .iter()
                .map(|&k| {
                    let dot: f64 = (0..d).map(|j| qkv[q][h * d + j] * qkv[k][c + h * d + j]).sum();
                    dot / (d as f64).sqrt() + bias(h, q, k)
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for (ki, &k) in keys.iter().enumerate() {
                let a = e[ki] / z;
                weights[h][q].push((k, a));
                for j in 0..d {
                    mixed[h * d + j] += a * qkv[k][2 * c + h * d + j];
                }
            }
        }
        for o in 0..c {
            out[q * c + o] = bp[o] + (0..c).map(|i| mixed[i] * wp[i * c + o]).sum::<f64>();
        }
    }
    (out, weights)
}

/// Relative-bias logit for positions given in window-local coordinates.
pub fn rel_bias(store: &ParamStore<f64>, attn: &Attention, h: usize, p: (usize, usize), k: (usize, usize)) -> f64 {
    match &attn.bias {
        None => 0.0,
        Some(t) => {
            let table = eff(store, t.table);
            let di = p.0 as isize - k.0 as isize + t.mh as isize - 1;
            let dj = p.1 as isize - k.1 as isize + t.mw as isize - 1;
            let row = di as usize * (2 * t.mw - 1) + dj as usize;
            table[row * t.heads + h]
        }
    }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn window_members(h: usize, w: usize, m: usize, s: usize, q: usize) -> Vec<(usize, usize, usize, (bool, bool))> {
    // (flat original index, local row, local col, wrapped per axis) of q's
    // shifted-window co-members.
    let (qi, qj) = (q / w, q % w);
    let (si, sj) = ((qi + h - s) % h, (qj + w - s) % w);
    let (wy, wx) = (si / m, sj / m);
    let mut out = Vec::new();
    for li in 0..m {
        for lj in 0..m {
            let (ri, rj) = (wy * m + li + s, wx * m + lj + s);
            out.push(((ri % h) * w + rj % w, li, lj, (ri >= h, rj >= w)));
        }
    }
    out
}

pub fn windowed_oracle(cfg: AttentionConfig, grid: (usize, usize), seed: u64, x: &Tensor<f64>) -> Vec<f64> {
    let (h, w) = grid;
    let m = cfg.window.unwrap();
    let s = if cfg.shifted { m / 2 } else { 0 };
    let (attn, store) = attention(cfg, grid, seed);
    let n = h * w;
    let c = cfg.dim;
    let b = x.shape()[0];
    let mut out = Vec::new();
    for bi in 0..b {
        let xb = &x.data()[bi * n * c..(bi + 1) * n * c];
        // A key is admissible when it shares the query's shifted window and
        // lies on the same side of every wrap-around seam.
        let allowed = |q: usize| {
            let members = window_members(h, w, m, s, q);
            let side = members.iter().find(|e| e.0 == q).unwrap().3;
            members.into_iter().filter(|e| e.3 == side).map(|e| e.0).collect::<Vec<_>>()
        };
        let local = |p: usize| {
            let e = window_members(h, w, m, s, p).into_iter().find(|e| e.0 == p).unwrap();
            (e.1, e.2)
        };
        let bias = |hd: usize, q: usize, k: usize| rel_bias(&store, &attn, hd, local(q), local(k));
        out.extend(oracle_attention(xb, n, &attn, &store, &allowed, &bias).0);
    }
    out
}

pub fn input_jacobian_row(cfgs: &[AttentionConfig], grid: (usize, usize), q: usize, seed: u64) -> Vec<f64> {
    // |∂out[q]/∂in[k]| summed over channels, for every k.
    let c = cfgs[0].dim;
    let n = grid.0 * grid.1;
    let x = Tensor::randn(&[1, n, c], 1.0, &mut rng(seed));
    let built: Vec<_> = cfgs.iter().enumerate().map(|(i, &cfg)| attention(cfg, grid, seed + i as u64)).collect();
    let mut total = vec![0.0; n];
    for ch in 0..c {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let mut h = xv;
        let ctxs: Vec<_> = built.iter().map(|(_, s)| Ctx::new(&tape, s)).collect();
        for ((a, _), ctx) in built.iter().zip(&ctxs) {
            h = a.forward(ctx, h, grid, false).unwrap().out;
        }
        let sel = Tensor::from_fn(&[1, n, c], |i| if i == q * c + ch { 1.0 } else { 0.0 });
        let loss = h.mul(tape.constant(sel)).unwrap().sum().unwrap();
        let g = loss.backward().unwrap();
        let gx = g.get(xv).unwrap();
        for k in 0..n {
            total[k] += gx.data()[k * c..(k + 1) * c].iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    total
}

pub fn captured_block(cfg: AttentionConfig, grid: (usize, usize), seed: u64) -> CapturedAttention {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(seed);
    let blk = {
        let mut b = Builder::new(&mut store, &mut r);
        TransformerBlock::build(&mut b, "blk", 1, grid, BlockOptions::generator(cfg)).unwrap()
    };
    randomize(&mut store, &mut r, 0.7);
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store).with_capture();
    let x = Tensor::randn(&[2, grid.0 * grid.1, cfg.dim], 1.0, &mut r);
    blk.forward(&ctx, tape.constant(x), None).unwrap();
    let mut caps = ctx.take_probe().attention;
    assert_eq!(caps.len(), 1);
    caps.pop().unwrap()
}

/// Closed-form trainable count of an unconditional generator with MLP ratio 2.
pub fn closed_form(latent: usize, c0: usize, stages: &[(usize, usize, bool)], heads: usize, window: usize) -> usize {
    let block = |c: usize, windowed: bool| {
        let attn = (c * 3 * c + 3 * c) + (c * c + c);
        let mlp = (c * 2 * c + 2 * c) + (2 * c * c + c);
        let norms = 2 * 2 * c;
        let bias = if windowed { (2 * window - 1).pow(2) * heads } else { 0 };
        attn + mlp + norms + bias
    };
    let input = latent * 16 * c0 + 16 * c0;
    let pos = 16 * c0;
    let body: usize = stages.iter().map(|&(c, n, w)| n * block(c, w)).sum();
    let cl = stages.last().unwrap().0;
    let rgb = 2 * cl + (cl * 2 * cl + 2 * cl) + (2 * cl * 3 + 3) + (cl * 3 + 3);
    input + pos + body + rgb
}
