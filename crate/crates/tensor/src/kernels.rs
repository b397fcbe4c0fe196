//! Dense numerical kernels.
//!
//! Every kernel computes each output row with the same fixed accumulation
//! order no matter how rows are split across threads, so the sequential and
//! parallel paths are bitwise identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::real::Real;

/// How a kernel distributes its rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Rayon row-parallel; identical to `Sequential` without the `parallel` feature.
    Parallel,
}

impl Exec {
    pub fn default_mode() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Below this many multiply-accumulates a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;
const ROWS_PER_TASK: usize = 16;

/// `c = a · b`, row-major `a[m,k]`, `b[k,n]`, `c[m,n]`.
pub fn gemm<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    gemm_with(Exec::default_mode(), a, b, c, m, k, n)
}

pub fn gemm_with<T: Real>(
    exec: Exec,
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel if m * k * n >= PAR_THRESHOLD && m > ROWS_PER_TASK => {
            c.par_chunks_mut(ROWS_PER_TASK * n)
                .zip(a.par_chunks(ROWS_PER_TASK * k))
                .for_each(|(c_rows, a_rows)| gemm_rows(a_rows, b, c_rows, k, n));
        }
        _ => gemm_rows(a, b, c, k, n),
    }
}

/// Batched `c[g] = a[g] · b[g]`; when `shared_b` is set every batch uses the
/// same `b[k,n]`.
#[allow(clippy::too_many_arguments)]
pub fn batched_gemm<T: Real>(
    exec: Exec,
    a: &[T],
    b: &[T],
    c: &mut [T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_b: bool,
) {
    if shared_b {
        return gemm_with(exec, a, b, c, batch * m, k, n);
    }
    assert_eq!(a.len(), batch * m * k);
    assert_eq!(b.len(), batch * k * n);
    assert_eq!(c.len(), batch * m * n);
    let job = |(g, c_g): (usize, &mut [T])| {
        gemm_rows(&a[g * m * k..(g + 1) * m * k], &b[g * k * n..(g + 1) * k * n], c_g, k, n)
    };
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel if batch * m * k * n >= PAR_THRESHOLD && batch > 1 => {
            c.par_chunks_mut(m * n).enumerate().for_each(job);
        }
        _ => c.chunks_mut(m * n).enumerate().for_each(job),
    }
}

/// Register tile: `MR` rows by `NR` columns of `c` accumulate locally.
const MR: usize = 4;
const NR: usize = 8;

/// Core row kernel. Each entry of `c` is the sum over `p` in increasing
/// order, whichever tile path computes it.
fn gemm_rows<T: Real>(a: &[T], b: &[T], c: &mut [T], k: usize, n: usize) {
    let rows = c.len() / n;
    let full_cols = n - n % NR;
    let mut r = 0;
    while r + MR <= rows {
        let mut j = 0;
        while j < full_cols {
            let mut acc = [[T::zero(); NR]; MR];
            for p in 0..k {
                let bv: &[T; NR] = b[p * n + j..p * n + j + NR].try_into().expect("tile");
                for (i, row) in acc.iter_mut().enumerate() {
                    let x = a[(r + i) * k + p];
                    for t in 0..NR {
                        row[t] += x * bv[t];
                    }
                }
            }
            for (i, row) in acc.iter().enumerate() {
                c[(r + i) * n + j..(r + i) * n + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        for i in r..r + MR {
            edge_row(&a[i * k..(i + 1) * k], b, &mut c[i * n..(i + 1) * n], full_cols, n);
        }
        r += MR;
    }
    while r < rows {
        edge_row(&a[r * k..(r + 1) * k], b, &mut c[r * n..(r + 1) * n], 0, n);
        r += 1;
    }
}

/// Columns `from..n` of one output row.
fn edge_row<T: Real>(arow: &[T], b: &[T], crow: &mut [T], from: usize, n: usize) {
    if from == n {
        return;
    }
    let out = &mut crow[from..];
    out.fill(T::zero());
    for (p, &x) in arow.iter().enumerate() {
        for (y, bv) in out.iter_mut().zip(&b[p * n + from..(p + 1) * n]) {
            *y += x * *bv;
        }
    }
}

/// `dst[n,m] = src[m,n]ᵀ`.
pub fn transpose<T: Real>(src: &[T], dst: &mut [T], m: usize, n: usize) {
    const TILE: usize = 32;
    for i0 in (0..m).step_by(TILE) {
        for j0 in (0..n).step_by(TILE) {
            for i in i0..(i0 + TILE).min(m) {
                for j in j0..(j0 + TILE).min(n) {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
    }
}

/// Reference triple loop used by tests and benches.
pub fn gemm_naive<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn gemm_matches_naive_on_odd_shapes() {
        for &(m, k, n) in &[(1, 1, 1), (5, 3, 7), (9, 16, 3), (33, 17, 65)] {
            let a = random(m * k, 1);
            let b = random(k * n, 2);
            let mut c = vec![0.0; m * n];
            gemm(&a, &b, &mut c, m, k, n);
            let expect = gemm_naive(&a, &b, m, k, n);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let (m, k, n) = (130, 64, 48);
        let a = random(m * k, 3);
        let b = random(k * n, 4);
        let mut seq = vec![0.0; m * n];
        let mut par = vec![0.0; m * n];
        gemm_with(Exec::Sequential, &a, &b, &mut seq, m, k, n);
        gemm_with(Exec::Parallel, &a, &b, &mut par, m, k, n);
        assert_eq!(seq, par);

        let batch = 40;
        let a = random(batch * 16 * 8, 5);
        let b = random(batch * 8 * 16, 6);
        let mut seq = vec![0.0; batch * 256];
        let mut par = vec![0.0; batch * 256];
        batched_gemm(Exec::Sequential, &a, &b, &mut seq, batch, 16, 8, 16, false);
        batched_gemm(Exec::Parallel, &a, &b, &mut par, batch, 16, 8, 16, false);
        assert_eq!(seq, par);
    }

    #[test]
    fn transpose_roundtrip() {
        let src = random(7 * 45, 7);
        let mut t = vec![0.0; src.len()];
        let mut back = vec![0.0; src.len()];
        transpose(&src, &mut t, 7, 45);
        transpose(&t, &mut back, 45, 7);
        assert_eq!(src, back);
        assert_eq!(t[3 * 7 + 2], src[2 * 45 + 3]);
    }
}
