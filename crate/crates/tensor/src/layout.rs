//! Pure index maps for data-movement ops. Entry `i` of a map names the flat
//! source offset of output element `i`; [`PAD`] marks a zero fill.

use crate::tensor::numel;

pub const PAD: u32 = u32::MAX;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output shape and index map of `permute(axes)`.
pub fn permute(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<u32>) {
    assert_eq!(shape.len(), axes.len());
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let total = numel(&out_shape);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        idx.push(offset as u32);
        for d in (0..out_shape.len()).rev() {
            counter[d] += 1;
            offset += step[d];
            if counter[d] < out_shape[d] {
                break;
            }
            offset -= step[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    (out_shape, idx)
}

/// `[B,H,W,4C] -> [B,2H,2W,C]` with `out[b,2i+di,2j+dj,c] = in[b,i,j,4c+2di+dj]`.
pub fn pixel_shuffle(b: usize, h: usize, w: usize, c4: usize) -> Vec<u32> {
    let c = c4 / 4;
    let mut idx = Vec::with_capacity(b * h * w * c4);
    for bi in 0..b {
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                let (i, di, j, dj) = (oy / 2, oy % 2, ox / 2, ox % 2);
                let base = ((bi * h + i) * w + j) * c4;
                for ch in 0..c {
                    idx.push((base + ch * 4 + di * 2 + dj) as u32);
                }
            }
        }
    }
    idx
}

/// Inverse of [`pixel_shuffle`]: `[B,2H,2W,C] -> [B,H,W,4C]`.
pub fn pixel_unshuffle(b: usize, h2: usize, w2: usize, c: usize) -> Vec<u32> {
    let (h, w) = (h2 / 2, w2 / 2);
    let mut idx = Vec::with_capacity(b * h2 * w2 * c);
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    for di in 0..2 {
                        for dj in 0..2 {
                            idx.push((((bi * h2 + 2 * i + di) * w2 + 2 * j + dj) * c + ch) as u32);
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Patch extraction for a `k×k` convolution over `[B,H,W,C]`:
/// rows are output pixels, columns are `(ky, kx, c)`.
pub fn im2col(b: usize, h: usize, w: usize, c: usize, k: usize, stride: usize, pad: usize) -> (usize, usize, Vec<u32>) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut idx = Vec::with_capacity(b * ho * wo * k * k * c);
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            idx.extend(std::iter::repeat_n(PAD, c));
                        } else {
                            let base = ((bi * h + iy as usize) * w + ix as usize) * c;
                            idx.extend((base..base + c).map(|v| v as u32));
                        }
                    }
                }
            }
        }
    }
    (ho, wo, idx)
}

/// One axis of a half-pixel-centered bilinear resize: for every output
/// coordinate the two source taps and the weight of the second.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

pub fn bilinear_taps(src: usize, dst: usize) -> Taps {
    let scale = src as f64 / dst as f64;
    let mut taps = Taps {
        lo: Vec::with_capacity(dst),
        hi: Vec::with_capacity(dst),
        frac: Vec::with_capacity(dst),
    };
    for o in 0..dst {
        let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.frac.push(if hi == lo { 0.0 } else { s - lo as f64 });
    }
    taps
}
