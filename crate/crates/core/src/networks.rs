//! Generator and discriminator assembly from declarative stage schedules.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use wingan_tensor::{ParamId, ParamStore, Real, Result, Tensor, TensorError, Var};

use crate::attention::AttentionConfig;
use crate::blocks::{BlockOptions, NormKind, Placement, ToRgb, TransformerBlock};
use crate::nn::{Builder, Ctx, Init, Linear, Role, LEAKY_SLOPE};

fn invalid(detail: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op: "network spec",
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Global,
    SwinPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    None,
    Bilinear,
    PixelShuffle,
}

fn two() -> usize {
    2
}

/// One square stage of a generator schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub resolution: usize,
    pub block_kind: BlockKind,
    #[serde(default = "two")]
    pub num_blocks: usize,
    pub channels: usize,
    pub upsample_in: Upsample,
    #[serde(default)]
    pub window_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalSpec {
    pub classes: usize,
    pub placement: Placement,
    #[serde(default)]
    pub norm: NormKind,
}

/// Which schedule rules a generator follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    /// Global attention below 16², window pairs from 16² on.
    #[default]
    Windowed,
    /// Global attention everywhere (the locality ablation baseline).
    Global,
}

pub const DEFAULT_LATENT: usize = 512;
pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_WINDOW: usize = 4;
pub const BASE_GRID: usize = 4;
/// First resolution served by window attention.
pub const LOCAL_FROM: usize = 16;
/// Largest token count a global stage may have without `force_memory`.
pub const GLOBAL_TOKEN_CAP: usize = 1024;

fn default_latent() -> usize {
    DEFAULT_LATENT
}
fn default_heads() -> usize {
    DEFAULT_HEADS
}
fn default_cap() -> usize {
    GLOBAL_TOKEN_CAP
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    pub channels: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub locality: Locality,
    pub stages: Vec<StageSpec>,
    /// Relative position bias in global blocks too.
    #[serde(default)]
    pub global_rel_bias: bool,
    #[serde(default)]
    pub conditional: Option<ConditionalSpec>,
    #[serde(default = "default_cap")]
    pub max_global_tokens: usize,
    #[serde(default)]
    pub force_memory: bool,
    /// Permits window stages below 16².
    #[serde(default)]
    pub allow_low_res_windows: bool,
}

fn schedule(target: usize, channels: usize, locality: Locality, window: usize, pixel_shuffle: bool) -> Result<Vec<StageSpec>> {
    if target < BASE_GRID || !target.is_power_of_two() {
        return Err(invalid(format!("target {target} must be a power of two >= {BASE_GRID}")));
    }
    let mut stages = Vec::new();
    let mut c = channels;
    let mut r = BASE_GRID;
    while r <= target {
        let upsample_in = if r == BASE_GRID {
            Upsample::None
        } else if r == 64 && pixel_shuffle {
            c /= 4;
            Upsample::PixelShuffle
        } else {
            Upsample::Bilinear
        };
        let local = locality == Locality::Windowed && r >= LOCAL_FROM;
        stages.push(StageSpec {
            resolution: r,
            block_kind: if local { BlockKind::SwinPair } else { BlockKind::Global },
            num_blocks: 2,
            channels: c,
            upsample_in,
            window_size: local.then_some(window),
        });
        r *= 2;
    }
    Ok(stages)
}

impl GeneratorSpec {
    fn with_stages(channels: usize, locality: Locality, stages: Vec<StageSpec>) -> Self {
        Self {
            latent_dim: DEFAULT_LATENT,
            channels,
            heads: DEFAULT_HEADS,
            locality,
            stages,
            global_rel_bias: false,
            conditional: None,
            max_global_tokens: GLOBAL_TOKEN_CAP,
            force_memory: false,
            allow_low_res_windows: false,
        }
    }

    /// Windowed generator: global stages below 16², window pairs after, pixel
    /// shuffle entering 64².
    pub fn strans(target: usize, channels: usize) -> Result<Self> {
        Ok(Self::with_stages(channels, Locality::Windowed, schedule(target, channels, Locality::Windowed, DEFAULT_WINDOW, true)?))
    }

    /// All-global baseline with the same upsampling schedule.
    pub fn trans(target: usize, channels: usize) -> Result<Self> {
        Ok(Self::with_stages(channels, Locality::Global, schedule(target, channels, Locality::Global, DEFAULT_WINDOW, true)?))
    }

    pub fn with_window(mut self, m: usize) -> Self {
        for s in &mut self.stages {
            if s.block_kind == BlockKind::SwinPair {
                s.window_size = Some(m);
            }
        }
        self
    }

    pub fn target(&self) -> usize {
        self.stages.last().map(|s| s.resolution).unwrap_or(0)
    }

    pub fn cond_dim(&self) -> usize {
        self.channels + self.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.stages.first().ok_or_else(|| invalid("no stages"))?;
        if first.resolution != BASE_GRID || first.upsample_in != Upsample::None || first.channels != self.channels {
            return Err(invalid(format!("first stage must be {BASE_GRID}x{BASE_GRID} with {} channels and no upsample", self.channels)));
        }
        if self.latent_dim == 0 || self.heads == 0 {
            return Err(invalid("latent_dim and heads must be positive"));
        }
        let mut shuffles = 0;
        for (i, s) in self.stages.iter().enumerate() {
            if s.num_blocks == 0 || s.channels == 0 || s.channels % self.heads != 0 {
                return Err(invalid(format!("stage {i}: {} channels, {} blocks, {} heads", s.channels, s.num_blocks, self.heads)));
            }
            if i > 0 {
                let prev = &self.stages[i - 1];
                if s.resolution != 2 * prev.resolution {
                    return Err(invalid(format!("stage {i}: resolution must double from {}", prev.resolution)));
                }
                let expect = match s.upsample_in {
                    Upsample::Bilinear => prev.channels,
                    Upsample::PixelShuffle => {
                        shuffles += 1;
                        if prev.channels % 4 != 0 {
                            return Err(invalid(format!("stage {i}: pixel shuffle needs channels divisible by 4")));
                        }
                        if s.resolution != 64 {
                            return Err(invalid(format!("stage {i}: pixel shuffle only enters the 64x64 stage")));
                        }
                        prev.channels / 4
                    }
                    Upsample::None => return Err(invalid(format!("stage {i}: later stages must upsample"))),
                };
                if s.channels != expect {
                    return Err(invalid(format!("stage {i}: expected {expect} channels, got {}", s.channels)));
                }
            }
            match s.block_kind {
                BlockKind::SwinPair => {
                    if self.locality == Locality::Global {
                        return Err(invalid(format!("stage {i}: window stage in an all-global generator")));
                    }
                    if s.resolution < LOCAL_FROM && !self.allow_low_res_windows {
                        return Err(invalid(format!("stage {i}: window attention below {LOCAL_FROM}x{LOCAL_FROM} needs allow_low_res_windows")));
                    }
                    let m = s.window_size.ok_or_else(|| invalid(format!("stage {i}: window pair without window size")))?;
                    if m == 0 || s.resolution % m != 0 || s.num_blocks % 2 != 0 {
                        return Err(invalid(format!("stage {i}: window {m} with {} blocks on {}", s.num_blocks, s.resolution)));
                    }
                }
                BlockKind::Global => {
                    if self.locality == Locality::Windowed && s.resolution >= LOCAL_FROM {
                        return Err(invalid(format!("stage {i}: global attention at {} in a windowed generator", s.resolution)));
                    }
                    let n = s.resolution * s.resolution;
                    if n > self.max_global_tokens && !self.force_memory {
                        return Err(invalid(format!(
                            "stage {i}: global attention over {n} tokens materializes a {n}x{n} score matrix per head; above the cap of {} (use force_memory)",
                            self.max_global_tokens
                        )));
                    }
                }
            }
        }
        if self.target() >= 64 && shuffles != 1 {
            return Err(invalid("exactly one pixel-shuffle upsample must enter the 64x64 stage"));
        }
        if let Some(c) = &self.conditional {
            if c.classes == 0 {
                return Err(invalid("conditional generator needs at least one class"));
            }
            if c.placement == Placement::C && !self.stages.iter().any(|s| s.block_kind == BlockKind::Global) {
                log::info!("placement c without global blocks reduces to placement b");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub spec: StageSpec,
    pub blocks: Vec<TransformerBlock>,
}

/// Transformer generator; parameters live in the store returned by [`Generator::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub input: Linear,
    pub pos: ParamId,
    pub class_emb: Option<ParamId>,
    pub stages: Vec<Stage>,
    pub to_rgb: ToRgb,
}

impl Generator {
    pub fn build<T: Real, R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Result<(Self, ParamStore<T>)> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut bld = Builder::new(&mut store, rng);
        let c = spec.channels;
        let role = Role::Generator;
        let g = BASE_GRID * BASE_GRID;
        let input = Linear::build(&mut bld, "input", spec.latent_dim, g * c, role)?;
        let pos = bld.param("pos", &[g, c], Init::TruncNormal { std: 0.02, lo: -2.0, hi: 2.0 }, 1.0)?;
        let class_emb = match &spec.conditional {
            Some(cs) => Some(bld.param("class_emb", &[cs.classes, c], Init::Normal { std: 1.0 }, 1.0)?),
            None => None,
        };
        let mut index = 0;
        let mut stages = Vec::with_capacity(spec.stages.len());
        for (si, st) in spec.stages.iter().enumerate() {
            let mut blocks = Vec::with_capacity(st.num_blocks);
            for bi in 0..st.num_blocks {
                index += 1;
                let cfg = match st.block_kind {
                    BlockKind::Global => {
                        let mut a = AttentionConfig::global(st.channels, spec.heads);
                        a.rel_bias = spec.global_rel_bias;
                        a
                    }
                    BlockKind::SwinPair => {
                        let m = st.window_size.expect("validated").min(st.resolution);
                        AttentionConfig::windowed(st.channels, spec.heads, m, bi % 2 == 1 && m < st.resolution)
                    }
                };
                let mut opt = BlockOptions::generator(cfg);
                if let Some(cs) = &spec.conditional {
                    opt = opt.conditional(cs.placement, cs.norm, spec.cond_dim());
                }
                let name = format!("stage{si}.block{bi}");
                blocks.push(TransformerBlock::build(&mut bld, &name, index, (st.resolution, st.resolution), opt)?);
            }
            stages.push(Stage { spec: *st, blocks });
        }
        let last = spec.stages.last().expect("validated").channels;
        let to_rgb = ToRgb::build(&mut bld, "to_rgb", last, role)?;
        Ok((
            Self {
                spec: spec.clone(),
                input,
                pos,
                class_emb,
                stages,
                to_rgb,
            },
            store,
        ))
    }

    /// `concat(class_emb[y], z)`, or `None` for unconditional generators.
    pub fn condition<'t, T: Real>(&self, ctx: &Ctx<'t, T>, z: Var<'t, T>, labels: Option<&[usize]>) -> Result<Option<Var<'t, T>>> {
        match (self.class_emb, labels) {
            (None, None) => Ok(None),
            (Some(emb), Some(y)) => {
                let b = z.shape()[0];
                let classes = self.spec.conditional.as_ref().expect("conditional").classes;
                if y.len() != b || y.iter().any(|&l| l >= classes) {
                    return Err(invalid(format!("{} labels in 0..{classes} expected, got {y:?}", b)));
                }
                let c = self.spec.channels;
                let idx: Vec<u32> = y.iter().flat_map(|&l| (l * c..(l + 1) * c).map(|i| i as u32)).collect();
                let e = ctx.weight(emb)?.gather(Arc::new(idx), &[b, c])?;
                Ok(Some(Var::concat_last(&[e, z])?))
            }
            (None, Some(_)) => Err(invalid("labels given to an unconditional generator")),
            (Some(_), None) => Err(invalid("conditional generator needs labels")),
        }
    }

    /// `z: [B, latent]` to images `[B, H, W, 3]` in `(-1, 1)`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, z: Var<'t, T>, labels: Option<&[usize]>) -> Result<Var<'t, T>> {
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != self.spec.latent_dim {
            return Err(TensorError::Shape {
                op: "generate",
                detail: format!("latent {zs:?}, expected [B, {}]", self.spec.latent_dim),
            });
        }
        let b = zs[0];
        let cond = self.condition(ctx, z, labels)?;
        let c = self.spec.channels;
        let mut x = self
            .input
            .forward(ctx, z)?
            .reshape(&[b, BASE_GRID * BASE_GRID, c])?
            .add_bcast(ctx.weight(self.pos)?)?;
        let mut res = BASE_GRID;
        let mut ch = c;
        for stage in &self.stages {
            match stage.spec.upsample_in {
                Upsample::None => {}
                Upsample::Bilinear => {
                    x = x.reshape(&[b, res, res, ch])?.bilinear_resize(2 * res, 2 * res)?;
                    res *= 2;
                }
                Upsample::PixelShuffle => {
                    x = x.reshape(&[b, res, res, ch])?.pixel_shuffle()?;
                    res *= 2;
                    ch /= 4;
                }
            }
            x = x.reshape(&[b, res * res, ch])?;
            for blk in &stage.blocks {
                x = blk.forward(ctx, x, cond)?;
            }
        }
        self.to_rgb.forward(ctx, x, (res, res))?.tanh()
    }

    /// Inference-mode generation of a batch.
    pub fn generate<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        let tape = wingan_tensor::Tape::inference();
        let ctx = Ctx::new(&tape, store);
        Ok(self.forward(&ctx, tape.constant(z.clone()), labels)?.value())
    }

    pub fn blocks(&self) -> impl Iterator<Item = &TransformerBlock> {
        self.stages.iter().flat_map(|s| s.blocks.iter())
    }
}

fn default_eqlr() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    /// Input image side.
    pub resolution: usize,
    pub channels: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "window_default")]
    pub window: usize,
    #[serde(default = "two")]
    pub blocks_per_stage: usize,
    #[serde(default = "default_eqlr")]
    pub eqlr_scale: f64,
    #[serde(default = "default_true")]
    pub skip_proj: bool,
    /// Class count when one-hot label planes are appended to the image.
    #[serde(default)]
    pub classes: Option<usize>,
}

fn window_default() -> usize {
    DEFAULT_WINDOW
}

impl DiscriminatorSpec {
    pub fn new(resolution: usize, channels: usize) -> Self {
        Self {
            resolution,
            channels,
            heads: DEFAULT_HEADS,
            window: DEFAULT_WINDOW,
            blocks_per_stage: 2,
            eqlr_scale: 0.1,
            skip_proj: true,
            classes: None,
        }
    }

    /// Token grids of the transformer stages, largest first, ending at 4.
    pub fn stage_grids(&self) -> Vec<usize> {
        let mut g = self.resolution / 4;
        let mut out = Vec::new();
        while g >= BASE_GRID {
            out.push(g);
            g /= 2;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if r < 16 || !r.is_power_of_two() {
            return Err(invalid(format!("discriminator input {r} must be a power of two >= 16")));
        }
        if self.channels < 2 || self.channels % 2 != 0 || self.channels % self.heads.max(1) != 0 || self.heads == 0 {
            return Err(invalid(format!("{} channels with {} heads", self.channels, self.heads)));
        }
        if self.window == 0 || self.blocks_per_stage == 0 || self.blocks_per_stage % 2 != 0 {
            return Err(invalid("window must be positive and blocks per stage even"));
        }
        if !(self.eqlr_scale > 0.0) {
            return Err(invalid("eqlr_scale must be positive"));
        }
        for g in self.stage_grids() {
            let m = self.window.min(g);
            if g % m != 0 {
                return Err(invalid(format!("window {m} does not tile a {g}x{g} grid")));
            }
        }
        Ok(())
    }
}

/// `(LReLU(conv₂(LReLU(conv₁(x)))) + skip(x)) / √2`, halving H and W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResDown {
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub skip: ParamId,
}

fn conv_param<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, k: usize, cin: usize, cout: usize, bias: bool) -> Result<(ParamId, Option<ParamId>)> {
    let (law, scale) = Role::DiscConv.weight(k * k * cin);
    let mut s = bld.scope(name);
    let w = s.param("weight", &[k, k, cin, cout], law, scale)?;
    let b = if bias { Some(s.param("bias", &[cout], Init::Zeros, 1.0)?) } else { None };
    Ok((w, b))
}

impl ResDown {
    fn build<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let mut s = bld.scope(name);
        let (w1, b1) = conv_param(&mut s, "conv1", 3, cin, cout, true)?;
        let (w2, b2) = conv_param(&mut s, "conv2", 3, cout, cout, true)?;
        let (sk, _) = conv_param(&mut s, "skip", 1, cin, cout, false)?;
        Ok(Self {
            conv1: (w1, b1.expect("bias")),
            conv2: (w2, b2.expect("bias")),
            skip: sk,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = x.conv2d(ctx.weight(self.conv1.0)?, Some(ctx.weight(self.conv1.1)?), 1, 1)?.leaky_relu(LEAKY_SLOPE)?;
        let h = h.conv2d(ctx.weight(self.conv2.0)?, Some(ctx.weight(self.conv2.1)?), 2, 1)?.leaky_relu(LEAKY_SLOPE)?;
        let s = x.conv2d(ctx.weight(self.skip)?, None, 2, 0)?;
        h.add(s)?.scale(std::f64::consts::FRAC_1_SQRT_2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticHead {
    pub conv: (ParamId, ParamId),
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub extractor: [ResDown; 2],
    pub stages: Vec<(usize, Vec<TransformerBlock>)>,
    pub head: CriticHead,
}

impl Discriminator {
    pub fn build<T: Real, R: Rng>(spec: &DiscriminatorSpec, rng: &mut R) -> Result<(Self, ParamStore<T>)> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut bld = Builder::new(&mut store, rng);
        let c = spec.channels;
        let cin = 3 + spec.classes.unwrap_or(0);
        let extractor = [ResDown::build(&mut bld, "extract0", cin, c / 2)?, ResDown::build(&mut bld, "extract1", c / 2, c)?];
        let mut index = 0;
        let mut stages = Vec::new();
        for (si, g) in spec.stage_grids().into_iter().enumerate() {
            let m = spec.window.min(g);
            let mut blocks = Vec::new();
            for bi in 0..spec.blocks_per_stage {
                index += 1;
                let cfg = AttentionConfig::windowed(c, spec.heads, m, bi % 2 == 1 && m < g);
                let opt = BlockOptions::discriminator(cfg, spec.eqlr_scale, spec.skip_proj);
                blocks.push(TransformerBlock::build(&mut bld, &format!("stage{si}.block{bi}"), index, (g, g), opt)?);
            }
            stages.push((g, blocks));
        }
        let (hw, hb) = conv_param(&mut bld, "head.conv", 3, c, c, true)?;
        let flat = BASE_GRID * BASE_GRID * c;
        let (l1, s1) = Role::DiscConv.weight(flat);
        let fc1 = Linear::build_with(&mut bld, "head.fc1", flat, c, l1, s1, Some((Init::Zeros, 1.0)))?;
        let (l2, s2) = Role::DiscConv.weight(c);
        let fc2 = Linear::build_with(&mut bld, "head.fc2", c, 1, l2, s2, Some((Init::Zeros, 1.0)))?;
        let head = CriticHead {
            conv: (hw, hb.expect("bias")),
            fc1,
            fc2,
        };
        Ok((
            Self {
                spec: spec.clone(),
                extractor,
                stages,
                head,
            },
            store,
        ))
    }

    /// Images `[B, H, W, 3]` to critic values `[B, 1]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, img: Var<'t, T>, labels: Option<&[usize]>) -> Result<Var<'t, T>> {
        let s = img.shape();
        let r = self.spec.resolution;
        if s.len() != 4 || s[1] != r || s[2] != r || s[3] != 3 {
            return Err(TensorError::Shape {
                op: "discriminate",
                detail: format!("image {s:?}, expected [B, {r}, {r}, 3]"),
            });
        }
        let b = s[0];
        let mut x = match (self.spec.classes, labels) {
            (None, None) => img,
            (Some(k), Some(y)) => {
                if y.len() != b || y.iter().any(|&l| l >= k) {
                    return Err(invalid(format!("{b} labels in 0..{k} expected")));
                }
                let planes = Tensor::from_fn(&[b, r, r, k], |i| {
                    let (bi, ch) = (i / (r * r * k), i % k);
                    if y[bi] == ch { T::one() } else { T::zero() }
                });
                Var::concat_last(&[img, ctx.constant(planes)])?
            }
            (None, Some(_)) => return Err(invalid("labels given to an unconditional discriminator")),
            (Some(_), None) => return Err(invalid("conditional discriminator needs labels")),
        };
        for e in &self.extractor {
            x = e.forward(ctx, x)?;
        }
        let c = self.spec.channels;
        for (i, (g, blocks)) in self.stages.iter().enumerate() {
            if i > 0 {
                x = x.reshape(&[b, 2 * g, 2 * g, c])?.bilinear_resize(*g, *g)?;
            }
            x = x.reshape(&[b, g * g, c])?;
            for blk in blocks {
                x = blk.forward(ctx, x, None)?;
            }
        }
        let h = &self.head;
        let x = x
            .reshape(&[b, BASE_GRID, BASE_GRID, c])?
            .conv2d(ctx.weight(h.conv.0)?, Some(ctx.weight(h.conv.1)?), 1, 1)?
            .leaky_relu(LEAKY_SLOPE)?
            .reshape(&[b, BASE_GRID * BASE_GRID * c])?;
        let x = h.fc1.forward(ctx, x)?.leaky_relu(LEAKY_SLOPE)?;
        h.fc2.forward(ctx, x)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &TransformerBlock> {
        self.stages.iter().flat_map(|(_, b)| b.iter())
    }
}

/// Trainable element counts grouped by component (`input`, `stage0.block1`, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Census {
    pub groups: BTreeMap<String, usize>,
    pub total: usize,
}

pub fn census<T: Real>(store: &ParamStore<T>) -> Census {
    let mut groups = BTreeMap::new();
    let mut total = 0;
    for (_, p) in store.trainable() {
        let parts: Vec<&str> = p.name.split('.').collect();
        let key = if parts[0].starts_with("stage") && parts.len() > 2 {
            format!("{}.{}", parts[0], parts[1])
        } else {
            parts[0].to_string()
        };
        *groups.entry(key).or_insert(0) += p.value.numel();
        total += p.value.numel();
    }
    Census { groups, total }
}
