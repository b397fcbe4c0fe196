use std::sync::Arc;

use crate::error::{invalid, shape_err, Result};
use crate::layout::{self, PAD};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

impl<'t, T: Real> Var<'t, T> {
    /// `out[i] = in[index[i]]`, zero where the index is [`PAD`]. Backward scatter-adds.
    pub fn gather(self, index: Arc<Vec<u32>>, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        if numel(shape) != index.len() {
            return shape_err("gather", format!("{} indices for shape {shape:?}", index.len()));
        }
        let n = x.numel();
        if let Some(&bad) = index.iter().find(|&&i| i != PAD && i as usize >= n) {
            return invalid("gather", format!("index {bad} out of range for {n} elements"));
        }
        let src = x.data();
        let y: Vec<T> = index
            .iter()
            .map(|&i| if i == PAD { T::zero() } else { src[i as usize] })
            .collect();
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "gather",
            Tensor::from_parts(shape.to_vec(), y),
            &[self],
            Some(Box::new(move |g, _| {
                let mut gx = vec![T::zero(); n];
                for (&i, &gv) in index.iter().zip(g.data()) {
                    if i != PAD {
                        gx[i as usize] += gv;
                    }
                }
                vec![Some(Tensor::from_parts(in_shape, gx))]
            })),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "reshape",
            y,
            &[self],
            Some(Box::new(move |g, _| vec![Some(g.reshape(&in_shape).expect("same size"))])),
        )
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return invalid("permute", format!("axes {axes:?} for rank {}", shape.len()));
        }
        let (out, idx) = layout::permute(&shape, axes);
        self.gather(Arc::new(idx), &out)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return invalid("narrow", format!("{start}+{len} on axis {axis} of {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut idx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            idx.extend((base..base + len * inner).map(|v| v as u32));
        }
        let mut out = shape.clone();
        out[axis] = len;
        self.gather(Arc::new(idx), &out)
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let Some(first) = parts.first() else {
            return invalid("concat_last", "no inputs");
        };
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let lead = &values[0].shape()[..values[0].ndim() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for v in &values {
            if v.ndim() == 0 || &v.shape()[..v.ndim() - 1] != lead {
                return shape_err("concat_last", format!("{:?} vs leading {lead:?}", v.shape()));
            }
            widths.push(*v.shape().last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = numel(lead);
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                y.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        first.tape.push(
            "concat_last",
            Tensor::from_parts(shape, y),
            parts,
            Some(Box::new(move |g, needs| {
                let mut off = 0;
                let mut out = Vec::with_capacity(widths.len());
                for ((&w, s), &need) in widths.iter().zip(&shapes).zip(needs) {
                    out.push(need.then(|| {
                        let mut part = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            part.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        Tensor::from_parts(s.clone(), part)
                    }));
                    off += w;
                }
                out
            })),
        )
    }

    /// `[B,H,W,4C] -> [B,2H,2W,C]`.
    pub fn pixel_shuffle(self) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 || s[3] % 4 != 0 {
            return invalid("pixel_shuffle", format!("needs [B,H,W,4C], got {s:?}"));
        }
        let idx = layout::pixel_shuffle(s[0], s[1], s[2], s[3]);
        self.gather(Arc::new(idx), &[s[0], 2 * s[1], 2 * s[2], s[3] / 4])
    }

    /// `[B,2H,2W,C] -> [B,H,W,4C]`, the inverse of [`Var::pixel_shuffle`].
    pub fn pixel_unshuffle(self) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.len() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return invalid("pixel_unshuffle", format!("needs [B,2H,2W,C], got {s:?}"));
        }
        let idx = layout::pixel_unshuffle(s[0], s[1], s[2], s[3]);
        self.gather(Arc::new(idx), &[s[0], s[1] / 2, s[2] / 2, s[3] * 4])
    }

    /// Bilinear resize of `[B,H,W,C]` with half-pixel centers.
    pub fn bilinear_resize(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || out_h == 0 || out_w == 0 {
            return invalid("bilinear_resize", format!("{s:?} -> {out_h}x{out_w}"));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let ty = layout::bilinear_taps(h, out_h);
        let tx = layout::bilinear_taps(w, out_w);
        let mut y = vec![T::zero(); b * out_h * out_w * c];
        let src = x.data();
        for bi in 0..b {
            for oy in 0..out_h {
                let fy = T::of(ty.frac[oy]);
                let (r0, r1) = ((bi * h + ty.lo[oy]) * w, (bi * h + ty.hi[oy]) * w);
                for ox in 0..out_w {
                    let fx = T::of(tx.frac[ox]);
                    let (c0, c1) = (tx.lo[ox], tx.hi[ox]);
                    let w00 = (T::one() - fy) * (T::one() - fx);
                    let w01 = (T::one() - fy) * fx;
                    let w10 = fy * (T::one() - fx);
                    let w11 = fy * fx;
                    let out = &mut y[((bi * out_h + oy) * out_w + ox) * c..][..c];
                    let p00 = &src[(r0 + c0) * c..][..c];
                    let p01 = &src[(r0 + c1) * c..][..c];
                    let p10 = &src[(r1 + c0) * c..][..c];
                    let p11 = &src[(r1 + c1) * c..][..c];
                    for ch in 0..c {
                        out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
                    }
                }
            }
        }
        self.tape.push(
            "bilinear_resize",
            Tensor::from_parts(vec![b, out_h, out_w, c], y),
            &[self],
            Some(Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![T::zero(); b * h * w * c];
                for bi in 0..b {
                    for oy in 0..out_h {
                        let fy = T::of(ty.frac[oy]);
                        let (r0, r1) = ((bi * h + ty.lo[oy]) * w, (bi * h + ty.hi[oy]) * w);
                        for ox in 0..out_w {
                            let fx = T::of(tx.frac[ox]);
                            let (c0, c1) = (tx.lo[ox], tx.hi[ox]);
                            let taps = [
                                (r0 + c0, (T::one() - fy) * (T::one() - fx)),
                                (r0 + c1, (T::one() - fy) * fx),
                                (r1 + c0, fy * (T::one() - fx)),
                                (r1 + c1, fy * fx),
                            ];
                            let go = &gd[((bi * out_h + oy) * out_w + ox) * c..][..c];
                            for (pix, wt) in taps {
                                let dst = &mut gx[pix * c..][..c];
                                for (d, &gv) in dst.iter_mut().zip(go) {
                                    *d += wt * gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_parts(s, gx))]
            })),
        )
    }

    /// 2-D convolution of `[B,H,W,Cin]` with `weight[k,k,Cin,Cout]`, zero padding.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let s = self.shape();
        let ws = weight.shape();
        if s.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[2] != s[3] || stride == 0 {
            return shape_err("conv2d", format!("input {s:?}, weight {ws:?}"));
        }
        let k = ws[0];
        if s[1] + 2 * pad < k || s[2] + 2 * pad < k {
            return shape_err("conv2d", format!("kernel {k} larger than padded input {s:?}"));
        }
        let (ho, wo, idx) = layout::im2col(s[0], s[1], s[2], s[3], k, stride, pad);
        let cols = self.gather(Arc::new(idx), &[s[0], ho, wo, k * k * s[3]])?;
        let w2 = weight.reshape(&[k * k * s[3], ws[3]])?;
        cols.linear(w2, bias)
    }
}
