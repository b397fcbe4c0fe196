use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// View of a buffer as `[outer, reduce, inner]`; statistics are taken over
/// `reduce` for every `(outer, inner)` pair.
#[derive(Clone, Copy)]
struct Groups {
    outer: usize,
    reduce: usize,
    inner: usize,
}

struct Standardized<T> {
    y: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    rstd: Vec<T>,
}

/// Contiguous groups (`inner == 1`), same accumulation order as the general path.
fn standardize_rows<T: Real>(x: &[T], reduce: usize, eps: T) -> Standardized<T> {
    let inv_n = T::one() / T::of(reduce as f64);
    let rows = x.len() / reduce;
    let mut y = vec![T::zero(); x.len()];
    let mut mean = Vec::with_capacity(rows);
    let mut var = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for (row, out) in x.chunks_exact(reduce).zip(y.chunks_exact_mut(reduce)) {
        let mut m = T::zero();
        for &v in row {
            m += v;
        }
        m *= inv_n;
        let mut s = T::zero();
        for &v in row {
            let d = v - m;
            s += d * d;
        }
        s *= inv_n;
        let r = T::one() / (s + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - m) * r;
        }
        mean.push(m);
        var.push(s);
        rstd.push(r);
    }
    Standardized { y, mean, var, rstd }
}

fn standardize_rows_backward<T: Real>(g: &[T], y: &[T], rstd: &[T], reduce: usize) -> Vec<T> {
    let inv_n = T::one() / T::of(reduce as f64);
    let mut gx = vec![T::zero(); g.len()];
    for (((grow, yrow), orow), &r) in g.chunks_exact(reduce).zip(y.chunks_exact(reduce)).zip(gx.chunks_exact_mut(reduce)).zip(rstd) {
        let mut mg = T::zero();
        let mut mgy = T::zero();
        for (&gv, &yv) in grow.iter().zip(yrow) {
            mg += gv;
            mgy += gv * yv;
        }
        for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
            *o = r * (gv - mg * inv_n - yv * mgy * inv_n);
        }
    }
    gx
}

fn standardize<T: Real>(x: &[T], gr: Groups, eps: T) -> Standardized<T> {
    let Groups { outer, reduce, inner } = gr;
    if inner == 1 {
        return standardize_rows(x, reduce, eps);
    }
    let inv_n = T::one() / T::of(reduce as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut mean = vec![T::zero(); outer * inner];
    let mut var = vec![T::zero(); outer * inner];
    let mut rstd = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let block = &x[o * reduce * inner..(o + 1) * reduce * inner];
        let m = &mut mean[o * inner..(o + 1) * inner];
        for row in block.chunks_exact(inner) {
            for (acc, &v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v *= inv_n);
        let s = &mut var[o * inner..(o + 1) * inner];
        for row in block.chunks_exact(inner) {
            for ((acc, &v), &mu) in s.iter_mut().zip(row).zip(m.iter()) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        let r = &mut rstd[o * inner..(o + 1) * inner];
        for (rv, sv) in r.iter_mut().zip(s.iter_mut()) {
            *sv *= inv_n;
            *rv = T::one() / (*sv + eps).sqrt();
        }
        let out = &mut y[o * reduce * inner..(o + 1) * reduce * inner];
        for (orow, row) in out.chunks_exact_mut(inner).zip(block.chunks_exact(inner)) {
            for (((ov, &v), &mu), &rs) in orow.iter_mut().zip(row).zip(m.iter()).zip(r.iter()) {
                *ov = (v - mu) * rs;
            }
        }
    }
    Standardized { y, mean, var, rstd }
}

/// `dx = rstd·(g − mean(g) − ŷ·mean(g·ŷ))` per group.
fn standardize_backward<T: Real>(g: &[T], y: &[T], rstd: &[T], gr: Groups) -> Vec<T> {
    let Groups { outer, reduce, inner } = gr;
    if inner == 1 {
        return standardize_rows_backward(g, y, rstd, reduce);
    }
    let inv_n = T::one() / T::of(reduce as f64);
    let mut gx = vec![T::zero(); g.len()];
    let mut mg = vec![T::zero(); inner];
    let mut mgy = vec![T::zero(); inner];
    for o in 0..outer {
        let span = o * reduce * inner..(o + 1) * reduce * inner;
        let (gb, yb) = (&g[span.clone()], &y[span.clone()]);
        mg.fill(T::zero());
        mgy.fill(T::zero());
        for (grow, yrow) in gb.chunks_exact(inner).zip(yb.chunks_exact(inner)) {
            for j in 0..inner {
                mg[j] += grow[j];
                mgy[j] += grow[j] * yrow[j];
            }
        }
        let r = &rstd[o * inner..(o + 1) * inner];
        for ((orow, grow), yrow) in gx[span].chunks_exact_mut(inner).zip(gb.chunks_exact(inner)).zip(yb.chunks_exact(inner)) {
            for j in 0..inner {
                orow[j] = r[j] * (grow[j] - mg[j] * inv_n - yrow[j] * mgy[j] * inv_n);
            }
        }
    }
    gx
}

/// Batch statistics returned by [`Var::batch_norm`] for running-average updates.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Population (biased) variance.
    pub var: Tensor<T>,
}

impl<'t, T: Real> Var<'t, T> {
    fn standardize_op(self, op: &'static str, gr: Groups, eps: f64) -> Result<(Var<'t, T>, Standardized<T>)> {
        let x = self.value();
        let st = standardize(x.data(), gr, T::of(eps));
        let y = Tensor::from_parts(x.shape().to_vec(), st.y.clone());
        let (yv, rstd) = (y.clone(), st.rstd.clone());
        let var = self.tape.push(
            op,
            y,
            &[self],
            Some(Box::new(move |g, _| {
                let gx = standardize_backward(g.data(), yv.data(), &rstd, gr);
                vec![Some(Tensor::from_parts(yv.shape().to_vec(), gx))]
            })),
        )?;
        Ok((var, st))
    }

    /// Standardizes every vector along the last axis (no affine).
    pub fn layer_norm(self, eps: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let Some(&c) = shape.last() else {
            return invalid("layer_norm", "scalar input");
        };
        let gr = Groups { outer: self.numel() / c, reduce: c, inner: 1 };
        Ok(self.standardize_op("layer_norm", gr, eps)?.0)
    }

    /// Standardizes `[B, N, C]` per (sample, channel) over the N positions.
    pub fn instance_norm(self, eps: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return shape_err("instance_norm", format!("expected [B,N,C], got {shape:?}"));
        }
        let gr = Groups { outer: shape[0], reduce: shape[1], inner: shape[2] };
        Ok(self.standardize_op("instance_norm", gr, eps)?.0)
    }

    /// Training-mode batch norm over every axis but the last; `B ≥ 2` required.
    pub fn batch_norm(self, eps: f64) -> Result<(Var<'t, T>, BatchStats<T>)> {
        let shape = self.shape();
        if shape.len() < 2 {
            return shape_err("batch_norm", format!("expected [B,...,C], got {shape:?}"));
        }
        if shape[0] < 2 {
            return invalid("batch_norm", "training mode needs a batch of at least 2");
        }
        let c = *shape.last().unwrap();
        let gr = Groups { outer: 1, reduce: self.numel() / c, inner: c };
        let (y, st) = self.standardize_op("batch_norm", gr, eps)?;
        let stats = BatchStats {
            mean: Tensor::from_parts(vec![c], st.mean),
            var: Tensor::from_parts(vec![c], st.var),
        };
        Ok((y, stats))
    }

    /// `(x − mean) / √(var + eps)` along the last axis with fixed statistics.
    pub fn normalize_with(self, mean: &Tensor<T>, var: &Tensor<T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let c = *x.shape().last().unwrap_or(&1);
        if mean.shape() != [c] || var.shape() != [c] {
            return shape_err("normalize_with", format!("stats for {c} channels expected"));
        }
        let eps = T::of(eps);
        let rstd: Vec<T> = var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = x.data().to_vec();
        for row in y.chunks_exact_mut(c) {
            for ((v, &m), &r) in row.iter_mut().zip(mean.data()).zip(&rstd) {
                *v = (*v - m) * r;
            }
        }
        self.tape.push(
            "normalize_with",
            Tensor::from_parts(x.shape().to_vec(), y),
            &[self],
            Some(Box::new(move |g, _| {
                let mut gx = g.data().to_vec();
                for row in gx.chunks_exact_mut(c) {
                    for (v, &r) in row.iter_mut().zip(&rstd) {
                        *v *= r;
                    }
                }
                vec![Some(Tensor::from_parts(g.shape().to_vec(), gx))]
            })),
        )
    }

    /// Softmax along `axis`, max-shifted before exponentiation.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return invalid("softmax", format!("axis {axis} for rank {}", shape.len()));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut y = x.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(y[base + j * inner]);
                }
                let mut s = T::zero();
                for j in 0..len {
                    let e = (y[base + j * inner] - mx).exp();
                    y[base + j * inner] = e;
                    s += e;
                }
                let inv = T::one() / s;
                for j in 0..len {
                    y[base + j * inner] *= inv;
                }
            }
        }
        let y = Tensor::from_parts(shape.clone(), y);
        let yv = y.clone();
        self.tape.push(
            "softmax",
            y,
            &[self],
            Some(Box::new(move |g, _| {
                let (gd, yd) = (g.data(), yv.data());
                let mut gx = vec![T::zero(); gd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for j in 0..len {
                            dot += gd[base + j * inner] * yd[base + j * inner];
                        }
                        for j in 0..len {
                            let k = base + j * inner;
                            gx[k] = yd[k] * (gd[k] - dot);
                        }
                    }
                }
                vec![Some(Tensor::from_parts(shape, gx))]
            })),
        )
    }
}
