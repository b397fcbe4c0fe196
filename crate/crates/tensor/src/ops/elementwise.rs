use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// 1/√(2π)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Checks that `b` is a trailing-suffix broadcast of `a`; returns the suffix size.
fn suffix_len<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<usize> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return shape_err(op, format!("{sb:?} is not a suffix of {sa:?}"));
    }
    Ok(b.numel())
}

/// Sums `g` over its leading axes down to a tensor of `shape`.
fn reduce_leading<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let inner: usize = shape.iter().product();
    let mut out = vec![T::zero(); inner];
    for chunk in g.data().chunks_exact(inner) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn unary<'t, T: Real>(
    x: Var<'t, T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let y = xv.map(f);
    let yv = y.clone();
    x.tape.push(
        op,
        y,
        &[x],
        Some(Box::new(move |g, _| {
            let gx: Vec<T> = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(yv.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts(xv.shape().to_vec(), gx))]
        })),
    )
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let y = a.zip_map(&b, |x, y| x + y)?;
        self.tape.push(
            "add",
            y,
            &[self, other],
            Some(Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())])),
        )
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let y = a.zip_map(&b, |x, y| x - y)?;
        self.tape.push(
            "sub",
            y,
            &[self, other],
            Some(Box::new(|g, _| vec![Some(g.clone()), Some(g.scale(-T::one()))])),
        )
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let y = a.zip_map(&b, |x, y| x * y)?;
        self.tape.push(
            "mul",
            y,
            &[self, other],
            Some(Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.zip_map(&b, |g, b| g * b).expect("shape")),
                    needs[1].then(|| g.zip_map(&a, |g, a| g * a).expect("shape")),
                ]
            })),
        )
    }

    /// `self + other` where `other`'s shape is a trailing suffix of `self`'s.
    pub fn add_bcast(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let inner = suffix_len("add_bcast", &a, &b)?;
        let mut y = a.into_vec();
        for chunk in y.chunks_exact_mut(inner) {
            for (v, &w) in chunk.iter_mut().zip(b.data()) {
                *v += w;
            }
        }
        let y = Tensor::from_parts(self.shape(), y);
        let b_shape = b.shape().to_vec();
        self.tape.push(
            "add_bcast",
            y,
            &[self, other],
            Some(Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| reduce_leading(g, &b_shape)),
                ]
            })),
        )
    }

    /// `self * other` where `other`'s shape is a trailing suffix of `self`'s.
    pub fn mul_bcast(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let inner = suffix_len("mul_bcast", &a, &b)?;
        let mut y = a.data().to_vec();
        for chunk in y.chunks_exact_mut(inner) {
            for (v, &w) in chunk.iter_mut().zip(b.data()) {
                *v *= w;
            }
        }
        let y = Tensor::from_parts(self.shape(), y);
        self.tape.push(
            "mul_bcast",
            y,
            &[self, other],
            Some(Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = g.data().to_vec();
                    for chunk in ga.chunks_exact_mut(inner) {
                        for (v, &w) in chunk.iter_mut().zip(b.data()) {
                            *v *= w;
                        }
                    }
                    Tensor::from_parts(a.shape().to_vec(), ga)
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); inner];
                    for (gc, ac) in g.data().chunks_exact(inner).zip(a.data().chunks_exact(inner)) {
                        for ((o, &g), &x) in gb.iter_mut().zip(gc).zip(ac) {
                            *o += g * x;
                        }
                    }
                    Tensor::from_parts(b.shape().to_vec(), gb)
                });
                vec![ga, gb]
            })),
        )
    }

    /// Per-sample channel affine: `x[b,n,c]·γ[b,c] + β[b,c]`.
    pub fn modulate(self, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        if x.ndim() != 3 {
            return shape_err("modulate", format!("expected [B,N,C], got {:?}", x.shape()));
        }
        let (bsz, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if gv.shape() != [bsz, c] || bv.shape() != [bsz, c] {
            return shape_err(
                "modulate",
                format!("gamma {:?} / beta {:?} vs x {:?}", gv.shape(), bv.shape(), x.shape()),
            );
        }
        let mut y = x.data().to_vec();
        for b in 0..bsz {
            let (gr, br) = (&gv.data()[b * c..(b + 1) * c], &bv.data()[b * c..(b + 1) * c]);
            for tok in y[b * n * c..(b + 1) * n * c].chunks_exact_mut(c) {
                for ((v, &g), &be) in tok.iter_mut().zip(gr).zip(br) {
                    *v = *v * g + be;
                }
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        self.tape.push(
            "modulate",
            y,
            &[self, gamma, beta],
            Some(Box::new(move |g, needs| {
                let gd = g.data();
                let gx = needs[0].then(|| {
                    let mut gx = gd.to_vec();
                    for b in 0..bsz {
                        let gr = &gv.data()[b * c..(b + 1) * c];
                        for tok in gx[b * n * c..(b + 1) * n * c].chunks_exact_mut(c) {
                            for (v, &gm) in tok.iter_mut().zip(gr) {
                                *v *= gm;
                            }
                        }
                    }
                    Tensor::from_parts(x.shape().to_vec(), gx)
                });
                let mut gg = vec![T::zero(); bsz * c];
                let mut gb = vec![T::zero(); bsz * c];
                if needs[1] || needs[2] {
                    for b in 0..bsz {
                        let rows = b * n * c..(b + 1) * n * c;
                        for (gt, xt) in gd[rows.clone()].chunks_exact(c).zip(x.data()[rows].chunks_exact(c)) {
                            for j in 0..c {
                                gg[b * c + j] += gt[j] * xt[j];
                                gb[b * c + j] += gt[j];
                            }
                        }
                    }
                }
                vec![
                    gx,
                    needs[1].then(|| Tensor::from_parts(vec![bsz, c], gg)),
                    needs[2].then(|| Tensor::from_parts(vec![bsz, c], gb)),
                ]
            })),
        )
    }

    pub fn scale(self, k: f64) -> Result<Var<'t, T>> {
        let k = T::of(k);
        let y = self.value().scale(k);
        self.tape
            .push("scale", y, &[self], Some(Box::new(move |g, _| vec![Some(g.scale(k))])))
    }

    pub fn add_scalar(self, k: f64) -> Result<Var<'t, T>> {
        let k = T::of(k);
        let y = self.value().map(|v| v + k);
        self.tape
            .push("add_scalar", y, &[self], Some(Box::new(|g, _| vec![Some(g.clone())])))
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        unary(self, "square", |x| x * x, |x, _| x + x)
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        unary(self, "tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(self) -> Result<Var<'t, T>> {
        unary(
            self,
            "softplus",
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| T::one() / (T::one() + (-x).exp()),
        )
    }

    /// LeakyReLU; at exactly zero the gradient takes the negative-side slope.
    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t, T>> {
        let s = T::of(slope);
        unary(
            self,
            "leaky_relu",
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        let (half, r2, c) = (T::of(0.5), T::of(FRAC_1_SQRT_2), T::of(INV_SQRT_2PI));
        unary(
            self,
            "gelu",
            move |x| half * x * (T::one() + (x * r2).erf()),
            move |x, _| half * (T::one() + (x * r2).erf()) + x * c * (-half * x * x).exp(),
        )
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let y = Tensor::scalar(xv.sum());
        let shape = xv.shape().to_vec();
        self.tape.push(
            "sum",
            y,
            &[self],
            Some(Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))])),
        )
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sums over every axis except the first: `[B, ...] -> [B]`.
    pub fn sum_per_sample(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        if xv.ndim() == 0 {
            return invalid("sum_per_sample", "needs a leading batch axis");
        }
        let b = xv.shape()[0];
        let inner = xv.numel() / b;
        let y: Vec<T> = xv.data().chunks_exact(inner).map(|c| c.iter().copied().sum()).collect();
        let shape = xv.shape().to_vec();
        self.tape.push(
            "sum_per_sample",
            Tensor::from_parts(vec![b], y),
            &[self],
            Some(Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(b * inner);
                for &v in g.data() {
                    gx.extend(std::iter::repeat_n(v, inner));
                }
                vec![Some(Tensor::from_parts(shape, gx))]
            })),
        )
    }
}
