//! Shared layer plumbing: the forward context, parameter construction and
//! the two primitive layers everything else is assembled from.

use std::cell::RefCell;

use rand::Rng;
use wingan_tensor::{ParamId, ParamStore, Real, Result, Tape, Tensor, Var};

use crate::diagnostics::{CapturedAttention, TapRecord};

/// Everything a forward pass reads besides its input.
pub struct Ctx<'t, T: Real> {
    pub tape: &'t Tape<T>,
    pub store: &'t ParamStore<T>,
    /// Batch norms use batch statistics (and queue running-stat updates) when set.
    pub train: bool,
    /// Parameters enter as constants, so no gradient reaches the store.
    pub frozen: bool,
    probe: RefCell<Probe>,
    bn_updates: RefCell<Vec<BnUpdate<T>>>,
}

/// What a forward pass records for diagnostics.
#[derive(Debug, Default)]
pub struct Probe {
    pub taps: bool,
    pub capture: bool,
    pub records: Vec<TapRecord>,
    pub attention: Vec<CapturedAttention>,
}

/// Batch statistics waiting to be folded into running buffers.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<'t, T: Real> Ctx<'t, T> {
    pub fn new(tape: &'t Tape<T>, store: &'t ParamStore<T>) -> Self {
        Self {
            tape,
            store,
            train: false,
            frozen: false,
            probe: RefCell::new(Probe::default()),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn training(mut self) -> Self {
        self.train = true;
        self
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn with_taps(self) -> Self {
        self.probe.borrow_mut().taps = true;
        self
    }

    pub fn with_capture(self) -> Self {
        self.probe.borrow_mut().capture = true;
        self
    }

    /// Parameter as used in the forward pass: `lr_scale · stored`.
    pub fn weight(&self, id: ParamId) -> Result<Var<'t, T>> {
        let v = if self.frozen {
            self.tape.constant(self.store.value(id).clone())
        } else {
            self.tape.param(self.store, id)
        };
        let c = self.store.get(id).lr_scale;
        if c == 1.0 {
            Ok(v)
        } else {
            v.scale(c)
        }
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(t)
    }

    pub(crate) fn taps_enabled(&self) -> bool {
        self.probe.borrow().taps
    }

    pub(crate) fn capture_enabled(&self) -> bool {
        self.probe.borrow().capture
    }

    pub(crate) fn record_tap(&self, rec: TapRecord) {
        self.probe.borrow_mut().records.push(rec);
    }

    pub(crate) fn record_attention(&self, cap: CapturedAttention) {
        self.probe.borrow_mut().attention.push(cap);
    }

    pub(crate) fn queue_bn(&self, u: BnUpdate<T>) {
        self.bn_updates.borrow_mut().push(u);
    }

    pub fn take_probe(&self) -> Probe {
        let mut p = self.probe.borrow_mut();
        Probe {
            taps: p.taps,
            capture: p.capture,
            records: std::mem::take(&mut p.records),
            attention: std::mem::take(&mut p.attention),
        }
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }
}

/// Folds queued batch statistics into running buffers:
/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>], momentum: f64) {
    let m = T::of(momentum);
    let keep = T::one() - m;
    for u in updates {
        for (id, batch) in [(u.mean_id, &u.mean), (u.var_id, &u.var)] {
            let mut run = store.value(id).clone();
            for (r, &b) in run.data_mut().iter_mut().zip(batch.data()) {
                *r = keep * *r + m * b;
            }
            store.set_value(id, run);
        }
    }
}

/// Weight initialization laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Normal with `std`, redrawn outside `[lo, hi]`.
    TruncNormal { std: f64, lo: f64, hi: f64 },
    Normal { std: f64 },
    /// Scaled identity; the tensor must be square.
    Identity(f64),
}

impl Init {
    pub fn sample<T: Real, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Const(v) => Tensor::full(shape, T::of(v)),
            Init::TruncNormal { std, lo, hi } => Tensor::trunc_normal(shape, std, lo, hi, rng),
            Init::Normal { std } => Tensor::randn(shape, std, rng),
            Init::Identity(k) => {
                assert!(shape.len() == 2 && shape[0] == shape[1], "identity init needs a square shape");
                let n = shape[0];
                Tensor::from_fn(shape, |i| if i / n == i % n { T::of(k) } else { T::zero() })
            }
        }
    }
}

/// Initialization roles with their value laws and runtime scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    /// Generator transformer: truncated normal, std 0.02, plain rate.
    Generator,
    /// Discriminator transformer under EqLR scale `c`: stored weights are
    /// `N(0, 0.02/c)` truncated to `±1/c`, so `c·w` has std 0.02.
    DiscTransformer { eqlr: f64 },
    /// Discriminator convolution/head: `N(0, 1)` with runtime scale `1/√fan_in`.
    DiscConv,
}

impl Role {
    /// (value law, lr_scale) for a weight of the given fan-in.
    pub fn weight(self, fan_in: usize) -> (Init, f64) {
        match self {
            Role::Generator => (Init::TruncNormal { std: 0.02, lo: -2.0, hi: 2.0 }, 1.0),
            Role::DiscTransformer { eqlr } => (
                Init::TruncNormal {
                    std: 0.02 / eqlr,
                    lo: -1.0 / eqlr,
                    hi: 1.0 / eqlr,
                },
                eqlr,
            ),
            Role::DiscConv => (Init::Normal { std: 1.0 }, 1.0 / (fan_in as f64).sqrt()),
        }
    }

    /// lr_scale for biases of linear maps under this role.
    pub fn bias_scale(self) -> f64 {
        match self {
            Role::DiscTransformer { eqlr } => eqlr,
            _ => 1.0,
        }
    }
}

/// Adds named parameters to a store under a dotted prefix.
pub struct Builder<'a, T: Real, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Real, R: Rng> Builder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// A builder whose names are prefixed by `name.`.
    pub fn scope(&mut self, name: &str) -> Builder<'_, T, R> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, lr_scale: f64) -> Result<ParamId> {
        let value = init.sample(shape, self.rng);
        let full = self.full_name(name);
        self.store.add(full, value, lr_scale)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add_buffer(full, value)
    }
}

/// `x·ŵ + b̂` over the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn build<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, d_in: usize, d_out: usize, role: Role) -> Result<Self> {
        let (init, scale) = role.weight(d_in);
        Self::build_with(bld, name, d_in, d_out, init, scale, Some((Init::Zeros, role.bias_scale())))
    }

    pub fn build_with<T: Real, R: Rng>(
        bld: &mut Builder<'_, T, R>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
        lr_scale: f64,
        bias: Option<(Init, f64)>,
    ) -> Result<Self> {
        let mut s = bld.scope(name);
        let w = s.param("weight", &[d_in, d_out], init, lr_scale)?;
        let b = match bias {
            Some((bi, bs)) => Some(s.param("bias", &[d_out], bi, bs)?),
            None => None,
        };
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.b.map(|b| ctx.weight(b)).transpose()?;
        x.linear(ctx.weight(self.w)?, b)
    }
}

/// Layer norm followed by a learned per-channel affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub weight: ParamId,
    pub bias: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn build<T: Real, R: Rng>(bld: &mut Builder<'_, T, R>, name: &str, c: usize) -> Result<Self> {
        let mut s = bld.scope(name);
        Ok(Self {
            weight: s.param("weight", &[c], Init::Const(1.0), 1.0)?,
            bias: s.param("bias", &[c], Init::Zeros, 1.0)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(NORM_EPS)?
            .mul_bcast(ctx.weight(self.weight)?)?
            .add_bcast(ctx.weight(self.bias)?)
    }
}

/// Channel activation used inside a network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn apply<'t, T: Real>(self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::LeakyRelu => x.leaky_relu(LEAKY_SLOPE),
        }
    }
}
