//! Multi-head self-attention over a token grid: global, windowed (W-MSA) and
//! shifted-window (SW-MSA) with an additive region mask.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use wingan_tensor::{ParamId, Real, Result, Tensor, TensorError, Var};

use crate::nn::{Builder, Ctx, Init, Linear, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub dim: usize,
    pub num_heads: usize,
    /// `None` for global attention.
    pub window: Option<usize>,
    pub shifted: bool,
    pub rel_bias: bool,
}

fn bad(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        detail: detail.into(),
    }
}

impl AttentionConfig {
    pub fn global(dim: usize, num_heads: usize) -> Self {
        Self {
            dim,
            num_heads,
            window: None,
            shifted: false,
            rel_bias: false,
        }
    }

    pub fn windowed(dim: usize, num_heads: usize, m: usize, shifted: bool) -> Self {
        Self {
            dim,
            num_heads,
            window: Some(m),
            shifted,
            rel_bias: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }

    pub fn shift(&self) -> usize {
        match (self.window, self.shifted) {
            (Some(m), true) => m / 2,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.dim == 0 || self.dim % self.num_heads != 0 {
            return Err(bad("attention", format!("dim {} not divisible by {} heads", self.dim, self.num_heads)));
        }
        match self.window {
            None if self.shifted => Err(bad("attention", "shifted attention needs a window size")),
            Some(0) => Err(bad("attention", "window size must be positive")),
            Some(1) if self.shifted => Err(bad("attention", "shifted windows need M >= 2")),
            _ => Ok(()),
        }
    }

    /// Checks the config against an application grid.
    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        if let Some(m) = self.window {
            if m > h.min(w) || h % m != 0 || w % m != 0 {
                return Err(bad("attention", format!("window {m} does not tile a {h}x{w} grid")));
            }
        }
        Ok(())
    }
}

/// Exact score-matrix multiply-accumulates per sample.
pub fn attention_op_count(cfg: &AttentionConfig, h: usize, w: usize) -> u64 {
    let (heads, d, n) = (cfg.num_heads as u64, cfg.head_dim() as u64, (h * w) as u64);
    match cfg.window {
        None => heads * n * n * d,
        Some(m) => heads * n * (m * m) as u64 * d,
    }
}

/// Output tokens plus, when requested, the softmax weights:
/// `[B, heads, N, N]` for global attention, `[B, nW, heads, T, T]` windowed.
pub struct AttentionOutput<'t, T: Real> {
    pub out: Var<'t, T>,
    pub weights: Option<Tensor<T>>,
}

/// Gather map for a cyclic shift of `[B,H,W,C]`: `out[i,j] = in[(i+sy)%H, (j+sx)%W]`.
pub fn roll_index(b: usize, h: usize, w: usize, c: usize, sy: usize, sx: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                let base = ((bi * h + (i + sy) % h) * w + (j + sx) % w) * c;
                idx.extend((base..base + c).map(|v| v as u32));
            }
        }
    }
    idx
}

/// Gather map from `[B,H,W,C]` to `[B·nW, M², C]`, tiles and tokens row-major.
pub fn partition_index(b: usize, h: usize, w: usize, c: usize, m: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for ty in 0..h / m {
            for tx in 0..w / m {
                for iy in 0..m {
                    for ix in 0..m {
                        let base = ((bi * h + ty * m + iy) * w + tx * m + ix) * c;
                        idx.extend((base..base + c).map(|v| v as u32));
                    }
                }
            }
        }
    }
    idx
}

fn invert(idx: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; idx.len()];
    for (o, &i) in idx.iter().enumerate() {
        inv[i as usize] = o as u32;
    }
    inv
}

fn grid_shape<T: Real>(op: &'static str, x: &Var<'_, T>) -> Result<(usize, usize, usize, usize)> {
    match x.shape()[..] {
        [b, h, w, c] => Ok((b, h, w, c)),
        ref s => Err(TensorError::Shape {
            op,
            detail: format!("expected [B,H,W,C], got {s:?}"),
        }),
    }
}

/// `[B,H,W,C] -> [B·(H/M)·(W/M), M², C]`.
pub fn window_partition<'t, T: Real>(x: Var<'t, T>, m: usize) -> Result<Var<'t, T>> {
    let (b, h, w, c) = grid_shape("window_partition", &x)?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(bad("window_partition", format!("window {m} does not tile {h}x{w}")));
    }
    x.gather(Arc::new(partition_index(b, h, w, c, m)), &[b * (h / m) * (w / m), m * m, c])
}

/// Inverse of [`window_partition`].
pub fn window_merge<'t, T: Real>(x: Var<'t, T>, m: usize, h: usize, w: usize) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if m == 0 || shape.len() != 3 || h % m != 0 || w % m != 0 || shape[1] != m * m {
        return Err(bad("window_merge", format!("{shape:?} for window {m} on {h}x{w}")));
    }
    let per = (h / m) * (w / m);
    if shape[0] % per != 0 {
        return Err(bad("window_merge", format!("{} windows is not a multiple of {per}", shape[0])));
    }
    let (b, c) = (shape[0] / per, shape[2]);
    let inv = invert(&partition_index(b, h, w, c, m));
    x.gather(Arc::new(inv), &[b, h, w, c])
}

/// Cyclic shift with `out[i,j] = in[(i+sy) mod H, (j+sx) mod W]`.
pub fn cyclic_shift<'t, T: Real>(x: Var<'t, T>, sy: usize, sx: usize) -> Result<Var<'t, T>> {
    let (b, h, w, c) = grid_shape("cyclic_shift", &x)?;
    x.gather(Arc::new(roll_index(b, h, w, c, sy % h, sx % w)), &[b, h, w, c])
}

fn band(pos: usize, len: usize, m: usize, s: usize) -> usize {
    if pos < len - m {
        0
    } else if pos < len - s {
        1
    } else {
        2
    }
}

/// Region id of every position of the shifted grid; tokens may only attend
/// within their own region.
pub fn shift_regions(h: usize, w: usize, m: usize, s: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            ids.push(band(i, h, m, s) * 3 + band(j, w, m, s));
        }
    }
    ids
}

/// Additive mask `[nW, T, T]`: 0 within a region, a large negative logit across.
pub fn shift_mask<T: Real>(h: usize, w: usize, m: usize, s: usize) -> Tensor<T> {
    let regions = shift_regions(h, w, m, s);
    let (nwy, nwx, t) = (h / m, w / m, m * m);
    let mut data = Vec::with_capacity(nwy * nwx * t * t);
    for wy in 0..nwy {
        for wx in 0..nwx {
            let id = |k: usize| regions[(wy * m + k / m) * w + wx * m + k % m];
            for p in 0..t {
                for q in 0..t {
                    data.push(if id(p) == id(q) { T::zero() } else { T::MASK_LOGIT });
                }
            }
        }
    }
    Tensor::new(&[nwy * nwx, t, t], data).expect("sized")
}

/// Table row for every (query, key) pair of an `mh × mw` window.
pub fn relative_index(mh: usize, mw: usize) -> Vec<usize> {
    let t = mh * mw;
    let mut idx = Vec::with_capacity(t * t);
    for p in 0..t {
        for q in 0..t {
            let di = p / mw + mh - 1 - q / mw;
            let dj = p % mw + mw - 1 - q % mw;
            idx.push(di * (2 * mw - 1) + dj);
        }
    }
    idx
}

/// Learned per-head logit bias indexed by relative offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelativeBiasTable {
    pub table: ParamId,
    pub mh: usize,
    pub mw: usize,
    pub heads: usize,
}

impl RelativeBiasTable {
    pub fn rows(mh: usize, mw: usize) -> usize {
        (2 * mh - 1) * (2 * mw - 1)
    }

    /// Bias as `[heads, T, T]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let t = self.mh * self.mw;
        let rel = relative_index(self.mh, self.mw);
        let mut idx = Vec::with_capacity(self.heads * t * t);
        for hh in 0..self.heads {
            idx.extend(rel.iter().map(|&r| (r * self.heads + hh) as u32));
        }
        ctx.weight(self.table)?.gather(Arc::new(idx), &[self.heads, t, t])
    }
}

/// Fused QKV projection, attention core and output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub cfg: AttentionConfig,
    pub qkv: Linear,
    pub proj: Linear,
    pub bias: Option<RelativeBiasTable>,
}

impl Attention {
    /// `grid` is the application grid; it sizes the bias table of global attention.
    pub fn build<T: Real, R: Rng>(
        bld: &mut Builder<'_, T, R>,
        name: &str,
        cfg: AttentionConfig,
        grid: (usize, usize),
        role: Role,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut s = bld.scope(name);
        let qkv = Linear::build(&mut s, "qkv", cfg.dim, 3 * cfg.dim, role)?;
        let proj = Linear::build(&mut s, "proj", cfg.dim, cfg.dim, role)?;
        let bias = if cfg.rel_bias {
            let (mh, mw) = match cfg.window {
                Some(m) => (m, m),
                None => grid,
            };
            let (law, scale) = match role {
                Role::DiscTransformer { eqlr } => (Init::TruncNormal { std: 0.02 / eqlr, lo: -1.0 / eqlr, hi: 1.0 / eqlr }, eqlr),
                _ => (Init::TruncNormal { std: 0.02, lo: -2.0, hi: 2.0 }, 1.0),
            };
            let table = s.param("rel_bias", &[RelativeBiasTable::rows(mh, mw), cfg.num_heads], law, scale)?;
            Some(RelativeBiasTable {
                table,
                mh,
                mw,
                heads: cfg.num_heads,
            })
        } else {
            None
        };
        Ok(Self { cfg, qkv, proj, bias })
    }

    /// Tokens `[B, H·W, C]` on an `h × w` grid.
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Ctx<'t, T>,
        x: Var<'t, T>,
        grid: (usize, usize),
        capture: bool,
    ) -> Result<AttentionOutput<'t, T>> {
        let (h, w) = grid;
        let cfg = &self.cfg;
        cfg.check_grid(h, w)?;
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != h * w || shape[2] != cfg.dim {
            return Err(TensorError::Shape {
                op: "attention",
                detail: format!("tokens {shape:?} for a {h}x{w} grid of dim {}", cfg.dim),
            });
        }
        let (b, c) = (shape[0], cfg.dim);
        let (heads, d) = (cfg.num_heads, cfg.head_dim());

        // Group the tokens: one group per sample (global) or per window.
        let (groups, t, fwd_index) = match cfg.window {
            None => (b, h * w, None),
            Some(m) => {
                let s = cfg.shift();
                let roll = roll_index(b, h, w, c, s, s);
                let part = partition_index(b, h, w, c, m);
                let fused: Vec<u32> = part.iter().map(|&i| roll[i as usize]).collect();
                (b * (h / m) * (w / m), m * m, Some(fused))
            }
        };
        let xg = match &fwd_index {
            None => x,
            Some(idx) => x.gather(Arc::new(idx.clone()), &[groups, t, c])?,
        };

        let qkv = self
            .qkv
            .forward(ctx, xg)?
            .reshape(&[groups, t, 3, heads, d])?
            .permute(&[2, 0, 3, 1, 4])?
            .reshape(&[3 * groups * heads, t, d])?;
        let gh = groups * heads;
        let q = qkv.narrow(0, 0, gh)?.scale(1.0 / (d as f64).sqrt())?;
        let k = qkv.narrow(0, gh, gh)?;
        let v = qkv.narrow(0, 2 * gh, gh)?;

        let mut logits = q.scores(k)?;
        if let Some(table) = &self.bias {
            if (table.mh * table.mw) != t {
                return Err(bad("attention", "relative bias table does not match the group size"));
            }
            logits = logits.reshape(&[groups, heads, t, t])?.add_bcast(table.forward(ctx)?)?;
        }
        if let (Some(m), true) = (cfg.window, cfg.shift() > 0) {
            let nw = (h / m) * (w / m);
            let mask = shift_mask::<T>(h, w, m, cfg.shift());
            let mut expanded = Vec::with_capacity(nw * heads * t * t);
            for win in mask.data().chunks_exact(t * t) {
                for _ in 0..heads {
                    expanded.extend_from_slice(win);
                }
            }
            let mask = Tensor::new(&[nw, heads, t, t], expanded)?;
            logits = logits.reshape(&[b, nw, heads, t, t])?.add_bcast(ctx.constant(mask))?;
        }
        let attn = logits.reshape(&[gh, t, t])?.softmax(2)?;
        let weights = capture.then(|| {
            let a = attn.value();
            match cfg.window {
                None => a.reshape(&[b, heads, t, t]),
                Some(m) => a.reshape(&[b, (h / m) * (w / m), heads, t, t]),
            }
            .expect("same size")
        });

        let mixed = attn
            .matmul(v)?
            .reshape(&[groups, heads, t, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[groups, t, c])?;
        let merged = match &fwd_index {
            None => mixed,
            Some(idx) => mixed.gather(Arc::new(invert(idx)), &[b, h * w, c])?,
        };
        Ok(AttentionOutput {
            out: self.proj.forward(ctx, merged)?,
            weights,
        })
    }
}

/// Global attention; the config must have no window.
pub fn global_msa<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    attn: &Attention,
    x: Var<'t, T>,
    grid: (usize, usize),
    capture: bool,
) -> Result<AttentionOutput<'t, T>> {
    if attn.cfg.window.is_some() {
        return Err(bad("global_msa", "config has a window size"));
    }
    attn.forward(ctx, x, grid, capture)
}

/// Window attention without shift.
pub fn w_msa<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    attn: &Attention,
    x: Var<'t, T>,
    grid: (usize, usize),
    capture: bool,
) -> Result<AttentionOutput<'t, T>> {
    if attn.cfg.window.is_none() || attn.cfg.shifted {
        return Err(bad("w_msa", "config must be windowed and unshifted"));
    }
    attn.forward(ctx, x, grid, capture)
}

/// Shifted-window attention.
pub fn sw_msa<'t, T: Real>(
    ctx: &Ctx<'t, T>,
    attn: &Attention,
    x: Var<'t, T>,
    grid: (usize, usize),
    capture: bool,
) -> Result<AttentionOutput<'t, T>> {
    if attn.cfg.window.is_none() || !attn.cfg.shifted {
        return Err(bad("sw_msa", "config must be windowed and shifted"));
    }
    attn.forward(ctx, x, grid, capture)
}
