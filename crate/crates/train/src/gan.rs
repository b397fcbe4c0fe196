//! Non-saturating logistic GAN losses with lazy R1, one D and one G update per step.

use wingan_core::networks::{Discriminator, Generator};
use wingan_core::nn::{apply_bn_updates, Ctx};
use wingan_tensor::{ParamStore, Real, Tape, Tensor, TensorError, Var};

use crate::config::LossConfig;
use crate::optim::Adam;

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what} is not finite")]
    NonFinite { what: &'static str },
    #[error("{what} = {value} exceeds the divergence bound {bound}")]
    Divergence { what: &'static str, value: f64, bound: f64 },
}

#[derive(Debug, Clone)]
pub struct Models<T> {
    pub g: Generator,
    pub gs: ParamStore<T>,
    pub d: Discriminator,
    pub ds: ParamStore<T>,
}

/// Inputs of one step. Fake labels go to both networks in conditional runs.
#[derive(Debug, Clone)]
pub struct StepBatch<T> {
    pub real: Tensor<T>,
    pub real_labels: Option<Vec<usize>>,
    pub z_d: Tensor<T>,
    pub z_g: Tensor<T>,
    pub fake_labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss_d: f64,
    pub loss_g: f64,
    /// `(γ/2)·mean‖∇D(real)‖²` on penalty steps, else 0.
    pub r1: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

fn check(what: &'static str, value: f64, bound: f64) -> Result<f64, StepError> {
    if !value.is_finite() {
        return Err(StepError::NonFinite { what });
    }
    if value.abs() > bound {
        return Err(StepError::Divergence { what, value, bound });
    }
    Ok(value)
}

/// `∇_x Σ_b D(x_b)` at the real batch.
pub fn real_gradient<T: Real>(d: &Discriminator, ds: &ParamStore<T>, real: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>, TensorError> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, ds).frozen();
    let x = tape.leaf(real.clone());
    let grads = d.forward(&ctx, x, labels)?.sum()?.backward()?;
    Ok(grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(real.shape())))
}

/// Perturbation size of the difference quotient, relative to `max|g|`.
pub fn hvp_delta<T: Real>() -> f64 {
    if T::DTYPE == wingan_tensor::DType::F64 {
        1e-4
    } else {
        1e-2
    }
}

/// Discriminator loss on `tape`. On penalty steps the returned variable also
/// carries a surrogate whose parameter gradient is that of the R1 term,
/// `∂/∂θ (γ·interval/B)·gᵀ∇_x ΣD` evaluated by a central difference of `ΣD`
/// along `g`. The reported loss value excludes the surrogate.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss<'t, T: Real>(
    d: &Discriminator,
    ctx: &Ctx<'t, T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    real_labels: Option<&[usize]>,
    fake_labels: Option<&[usize]>,
    cfg: &LossConfig,
    penalty: bool,
) -> Result<(Var<'t, T>, StepStats), TensorError> {
    let df = d.forward(ctx, ctx.constant(fake.clone()), fake_labels)?;
    let dr = d.forward(ctx, ctx.constant(real.clone()), real_labels)?;
    let loss = df.softplus()?.mean()?.add(dr.scale(-1.0)?.softplus()?.mean()?)?;
    let mut stats = StepStats {
        loss_d: loss.value().item().as_f64(),
        d_real: dr.value().mean().as_f64(),
        d_fake: df.value().mean().as_f64(),
        ..Default::default()
    };
    if !penalty || cfg.r1_gamma == 0.0 {
        return Ok((loss, stats));
    }
    let g = real_gradient(d, ctx.store, real, real_labels)?;
    let b = real.shape()[0] as f64;
    let sq: f64 = g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum();
    stats.r1 = 0.5 * cfg.r1_gamma * sq / b;
    stats.loss_d += stats.r1;
    let gmax = g.max_abs().as_f64();
    if gmax == 0.0 {
        return Ok((loss, stats));
    }
    let eps = hvp_delta::<T>() / gmax;
    let plus = real.zip_map(&g, |x, gi| x + T::of(eps) * gi)?;
    let minus = real.zip_map(&g, |x, gi| x - T::of(eps) * gi)?;
    let sp = d.forward(ctx, ctx.constant(plus), real_labels)?.sum()?;
    let sm = d.forward(ctx, ctx.constant(minus), real_labels)?.sum()?;
    let coef = cfg.r1_gamma * cfg.r1_interval as f64 / (b * 2.0 * eps);
    let surrogate = sp.sub(sm)?.scale(coef)?;
    Ok((loss.add(surrogate)?, stats))
}

/// Generator loss `mean softplus(−D(G(z)))` with D read as constants.
pub fn generator_loss<'t, T: Real>(
    models: &Models<T>,
    ctx_g: &Ctx<'t, T>,
    ctx_d: &Ctx<'t, T>,
    z: &Tensor<T>,
    labels: Option<&[usize]>,
) -> Result<Var<'t, T>, TensorError> {
    let fake = models.g.forward(ctx_g, ctx_g.constant(z.clone()), labels)?;
    models.d.forward(ctx_d, fake, labels)?.scale(-1.0)?.softplus()?.mean()
}

/// One discriminator update followed by one generator update.
pub fn gan_step<T: Real>(
    models: &mut Models<T>,
    adam_g: &mut Adam<T>,
    adam_d: &mut Adam<T>,
    batch: &StepBatch<T>,
    cfg: &LossConfig,
    penalty: bool,
) -> Result<StepStats, StepError> {
    let fl = batch.fake_labels.as_deref();
    let rl = batch.real_labels.as_deref();

    let fake = {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &models.gs).training();
        models.g.forward(&ctx, tape.constant(batch.z_d.clone()), fl)?.value()
    };
    let mut stats = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &models.ds).training();
        let (loss, stats) = discriminator_loss(&models.d, &ctx, &batch.real, &fake, rl, fl, cfg, penalty)?;
        check("loss_d", stats.loss_d, cfg.divergence)?;
        let grads = loss.backward()?.into_params();
        adam_d.step(&mut models.ds, &grads);
        stats
    };

    let (loss_g, bn) = {
        let tape = Tape::new();
        let ctx_g = Ctx::new(&tape, &models.gs).training();
        let ctx_d = Ctx::new(&tape, &models.ds).frozen();
        let loss = generator_loss(models, &ctx_g, &ctx_d, &batch.z_g, fl)?;
        let value = loss.value().item().as_f64();
        check("loss_g", value, cfg.divergence)?;
        let grads = loss.backward()?.into_params();
        let bn = ctx_g.take_bn_updates();
        drop(ctx_g);
        drop(ctx_d);
        adam_g.step(&mut models.gs, &grads);
        (value, bn)
    };
    apply_bn_updates(&mut models.gs, &bn, cfg.bn_momentum);
    stats.loss_g = loss_g;
    Ok(stats)
}
