//! Transformer blocks with optional skip projections, tail activations and
//! adaptive normalization, plus the toRGB head.

use rand::Rng;
use serde::{Deserialize, Serialize};
use wingan_tensor::{ParamId, Real, Result, Tensor, TensorError, Var};

use crate::attention::{Attention, AttentionConfig};
use crate::diagnostics::{AttnLayout, CapturedAttention, TapRecord};
use crate::nn::{Activation, BnUpdate, Builder, Ctx, Init, LayerNorm, Linear, Role, NORM_EPS};

pub const MLP_RATIO: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Layer,
    Instance,
    Batch,
}

/// Where adaptive normalization sits inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Replaces the pre-norms on the residual branch only.
    A,
    /// Normalizes the trunk before each sub-layer, so the shortcut is modulated too.
    B,
    /// `B` plus an AdaNorm on the attention output of global-attention blocks.
    C,
}

/// Channelwise affine modulation `γ(y,z)·Norm(x) + β(y,z)`, with γ and β
/// linear in the condition vector and initialized to 1 and 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaNorm {
    pub kind: NormKind,
    pub gamma: Linear,
    pub beta: Linear,
    /// Running mean and variance for the batch-norm base.
    pub running: Option<(ParamId, ParamId)>,
}

impl AdaNorm {
    pub fn build<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, c: usize, cond_dim: usize, kind: NormKind) -> Result<Self> {
        let mut s = bld.scope(name);
        let gamma = Linear::build_with(&mut s, "gamma", cond_dim, c, Init::Zeros, 1.0, Some((Init::Const(1.0), 1.0)))?;
        let beta = Linear::build_with(&mut s, "beta", cond_dim, c, Init::Zeros, 1.0, Some((Init::Zeros, 1.0)))?;
        let running = match kind {
            NormKind::Batch => Some((
                s.buffer("running_mean", Tensor::zeros(&[c]))?,
                s.buffer("running_var", Tensor::ones(&[c]))?,
            )),
            _ => None,
        };
        Ok(Self {
            kind,
            gamma,
            beta,
            running,
        })
    }

    /// The base norm without modulation.
    pub fn normalize<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self.kind {
            NormKind::Layer => x.layer_norm(NORM_EPS),
            NormKind::Instance => x.instance_norm(NORM_EPS),
            NormKind::Batch => {
                let (mean_id, var_id) = self.running.expect("batch norm has running buffers");
                if ctx.train {
                    let (y, stats) = x.batch_norm(NORM_EPS)?;
                    ctx.queue_bn(BnUpdate {
                        mean_id,
                        var_id,
                        mean: stats.mean,
                        var: stats.var,
                    });
                    Ok(y)
                } else {
                    x.normalize_with(ctx.store.value(mean_id), ctx.store.value(var_id), NORM_EPS)
                }
            }
        }
    }

    /// `x: [B, N, C]`, `cond: [B, cond_dim]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>, cond: Var<'t, T>) -> Result<Var<'t, T>> {
        let normed = self.normalize(ctx, x)?;
        let g = self.gamma.forward(ctx, cond)?;
        let b = self.beta.forward(ctx, cond)?;
        normed.modulate(g, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub act: Activation,
}

impl Mlp {
    pub fn build<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, c: usize, out: usize, act: Activation, role: Role) -> Result<Self> {
        let mut s = bld.scope(name);
        Ok(Self {
            fc1: Linear::build(&mut s, "fc1", c, MLP_RATIO * c, role)?,
            fc2: Linear::build(&mut s, "fc2", MLP_RATIO * c, out, role)?,
            act,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.act.apply(self.fc1.forward(ctx, x)?)?;
        self.fc2.forward(ctx, h)
    }
}

/// Construction options of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOptions {
    pub attn: AttentionConfig,
    pub act: Activation,
    /// LeakyReLU on both branch outputs.
    pub tail: bool,
    pub skip_proj: bool,
    pub placement: Option<Placement>,
    pub norm: NormKind,
    pub cond_dim: usize,
    pub role: Role,
}

impl BlockOptions {
    pub fn generator(attn: AttentionConfig) -> Self {
        Self {
            attn,
            act: Activation::Gelu,
            tail: false,
            skip_proj: false,
            placement: None,
            norm: NormKind::Layer,
            cond_dim: 0,
            role: Role::Generator,
        }
    }

    pub fn discriminator(attn: AttentionConfig, eqlr: f64, skip_proj: bool) -> Self {
        Self {
            attn,
            act: Activation::LeakyRelu,
            tail: true,
            skip_proj,
            placement: None,
            norm: NormKind::Layer,
            cond_dim: 0,
            role: Role::DiscTransformer { eqlr },
        }
    }

    pub fn conditional(mut self, placement: Placement, norm: NormKind, cond_dim: usize) -> Self {
        self.placement = Some(placement);
        self.norm = norm;
        self.cond_dim = cond_dim;
        self
    }
}

/// `h₁ = S₁(h) + f₁(h)`, `h₂ = S₂(h₁) + f₂(h₁)` with attention and MLP
/// branches; `S` is the identity or a learned square projection.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    /// 1-based position in the network; taps are labelled `A{index}` / `M{index}`.
    pub index: usize,
    pub grid: (usize, usize),
    pub attn: Attention,
    pub mlp: Mlp,
    pub norm1: Option<LayerNorm>,
    pub norm2: Option<LayerNorm>,
    pub ada1: Option<AdaNorm>,
    pub ada2: Option<AdaNorm>,
    pub ada_post: Option<AdaNorm>,
    pub skip1: Option<Linear>,
    pub skip2: Option<Linear>,
    pub tail: bool,
    pub placement: Option<Placement>,
}

fn skip_linear<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, c: usize, role: Role) -> Result<Linear> {
    let scale = match role {
        Role::DiscTransformer { eqlr } => eqlr,
        _ => 1.0,
    };
    // Stored as I/c so the runtime weight c·w is exactly the identity.
    Linear::build_with(bld, name, c, c, Init::Identity(1.0 / scale), scale, Some((Init::Zeros, scale)))
}

impl TransformerBlock {
    pub fn build<T: Real, R: Rng>(
        bld: &mut Builder<'_, T, R>,
        name: &str,
        index: usize,
        grid: (usize, usize),
        opt: BlockOptions,
    ) -> Result<Self> {
        let c = opt.attn.dim;
        let mut s = bld.scope(name);
        let attn = Attention::build(&mut s, "attn", opt.attn, grid, opt.role)?;
        let mlp = Mlp::build(&mut s, "mlp", c, c, opt.act, opt.role)?;
        let (norm1, norm2, ada1, ada2) = match opt.placement {
            None => (Some(LayerNorm::build(&mut s, "norm1", c)?), Some(LayerNorm::build(&mut s, "norm2", c)?), None, None),
            Some(_) => (
                None,
                None,
                Some(AdaNorm::build(&mut s, "ada1", c, opt.cond_dim, opt.norm)?),
                Some(AdaNorm::build(&mut s, "ada2", c, opt.cond_dim, opt.norm)?),
            ),
        };
        let ada_post = match opt.placement {
            Some(Placement::C) if opt.attn.window.is_none() => Some(AdaNorm::build(&mut s, "ada_post", c, opt.cond_dim, opt.norm)?),
            _ => None,
        };
        let (skip1, skip2) = if opt.skip_proj {
            (Some(skip_linear(&mut s, "skip1", c, opt.role)?), Some(skip_linear(&mut s, "skip2", c, opt.role)?))
        } else {
            (None, None)
        };
        Ok(Self {
            index,
            grid,
            attn,
            mlp,
            norm1,
            norm2,
            ada1,
            ada2,
            ada_post,
            skip1,
            skip2,
            tail: opt.tail,
            placement: opt.placement,
        })
    }

    pub fn conditional(&self) -> bool {
        self.placement.is_some()
    }

    fn tail<'t, T: Real>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.tail {
            x.leaky_relu(crate::nn::LEAKY_SLOPE)
        } else {
            Ok(x)
        }
    }

    fn shortcut<'t, T: Real>(ctx: &Ctx<'t, T>, skip: &Option<Linear>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match skip {
            Some(l) => l.forward(ctx, x),
            None => Ok(x),
        }
    }

    /// Norm ahead of a sub-layer: returns (shortcut input, branch input).
    fn pre<'t, T: Real>(
        &self,
        ctx: &Ctx<'t, T>,
        h: Var<'t, T>,
        ln: &Option<LayerNorm>,
        ada: &Option<AdaNorm>,
        cond: Option<Var<'t, T>>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        match (self.placement, ln, ada) {
            (None, Some(ln), _) => Ok((h, ln.forward(ctx, h)?)),
            (Some(Placement::A), _, Some(a)) => Ok((h, a.forward(ctx, h, cond.expect("checked"))?)),
            (Some(_), _, Some(a)) => {
                let t = a.forward(ctx, h, cond.expect("checked"))?;
                Ok((t, t))
            }
            _ => unreachable!("norms are built to match the placement"),
        }
    }

    fn tap<T: Real>(&self, ctx: &Ctx<'_, T>, kind: char, s: &Var<'_, T>, f: &Var<'_, T>) {
        if ctx.taps_enabled() {
            ctx.record_tap(TapRecord::new(format!("{kind}{}", self.index), self.grid, &s.value(), &f.value()));
        }
    }

    /// Tokens `[B, H·W, C]`; `cond` is the `[B, cond_dim]` condition vector,
    /// required exactly when the block is conditional.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, h: Var<'t, T>, cond: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        if self.conditional() != cond.is_some() {
            return Err(TensorError::Invalid {
                op: "transformer_block",
                detail: if cond.is_some() { "condition given to an unconditional block" } else { "missing condition" }.into(),
            });
        }
        let (s_in, b_in) = self.pre(ctx, h, &self.norm1, &self.ada1, cond)?;
        let capture = ctx.capture_enabled();
        let att = self.attn.forward(ctx, b_in, self.grid, capture)?;
        if let Some(w) = &att.weights {
            let cfg = &self.attn.cfg;
            let layout = match cfg.window {
                None => AttnLayout::Global,
                Some(m) => AttnLayout::Windowed { m, shift: cfg.shift() },
            };
            let cap = CapturedAttention::new(format!("A{}", self.index), self.grid, cfg.num_heads, layout, w)
                .map_err(|e| TensorError::Invalid { op: "capture", detail: e.to_string() })?;
            ctx.record_attention(cap);
        }
        let mut f1 = att.out;
        if let Some(post) = &self.ada_post {
            f1 = post.forward(ctx, f1, cond.expect("checked"))?;
        }
        let f1 = self.tail(f1)?;
        let s1 = Self::shortcut(ctx, &self.skip1, s_in)?;
        self.tap(ctx, 'A', &s1, &f1);
        let h1 = s1.add(f1)?;

        let (s_in, b_in) = self.pre(ctx, h1, &self.norm2, &self.ada2, cond)?;
        let f2 = self.tail(self.mlp.forward(ctx, b_in)?)?;
        let s2 = Self::shortcut(ctx, &self.skip2, s_in)?;
        self.tap(ctx, 'M', &s2, &f2);
        s2.add(f2)
    }
}

/// Final token-to-image map: `skip(h) + mlp₃(LN(h))`, reshaped to `[B,H,W,3]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToRgb {
    pub norm: LayerNorm,
    pub mlp: Mlp,
    pub skip: Linear,
}

impl ToRgb {
    pub fn build<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, c: usize, role: Role) -> Result<Self> {
        let mut s = bld.scope(name);
        Ok(Self {
            norm: LayerNorm::build(&mut s, "norm", c)?,
            mlp: Mlp::build(&mut s, "mlp", c, 3, Activation::Gelu, role)?,
            skip: Linear::build(&mut s, "skip", c, 3, role)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, h: Var<'t, T>, grid: (usize, usize)) -> Result<Var<'t, T>> {
        let shape = h.shape();
        if shape.len() != 3 || shape[1] != grid.0 * grid.1 {
            return Err(TensorError::Shape {
                op: "to_rgb",
                detail: format!("tokens {shape:?} for a {}x{} grid", grid.0, grid.1),
            });
        }
        let branch = self.mlp.forward(ctx, self.norm.forward(ctx, h)?)?;
        self.skip.forward(ctx, h)?.add(branch)?.reshape(&[shape[0], grid.0, grid.1, 3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use wingan_tensor::{ParamStore, Tape};

    #[test]
    fn placement_c_adds_post_norm_only_on_global_blocks() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder::new(&mut store, &mut rng);
        let g = BlockOptions::generator(AttentionConfig::global(8, 2)).conditional(Placement::C, NormKind::Layer, 4);
        let w = BlockOptions::generator(AttentionConfig::windowed(8, 2, 2, false)).conditional(Placement::C, NormKind::Layer, 4);
        assert!(TransformerBlock::build(&mut b, "g", 1, (2, 2), g).unwrap().ada_post.is_some());
        assert!(TransformerBlock::build(&mut b, "w", 2, (2, 2), w).unwrap().ada_post.is_none());
    }

    #[test]
    fn missing_condition_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder::new(&mut store, &mut rng);
        let opt = BlockOptions::generator(AttentionConfig::global(4, 1)).conditional(Placement::A, NormKind::Layer, 3);
        let blk = TransformerBlock::build(&mut b, "b", 1, (1, 2), opt).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let x = tape.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(blk.forward(&ctx, x, None).is_err());
    }
}
