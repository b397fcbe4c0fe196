use crate::error::{shape_err, Result};
use crate::kernels::{batched_gemm, Exec};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

fn bmm<T: Real>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize, shared_b: bool) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    batched_gemm(Exec::default_mode(), a, b, &mut c, batch, m, k, n, shared_b);
    c
}

fn transposed<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.transpose_last().expect("rank checked by caller")
}

/// Splits `[..., r, c]` into (batch, r, c).
fn mat_dims(shape: &[usize]) -> (usize, usize, usize) {
    let nd = shape.len();
    (shape[..nd - 2].iter().product(), shape[nd - 2], shape[nd - 1])
}

impl<'t, T: Real> Var<'t, T> {
    /// `a[..., m, k] · b[k, n]` or `a[..., m, k] · b[..., k, n]` with equal batch axes.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.ndim() < 2 || b.ndim() < 2 {
            return shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
        }
        let (ba, m, k) = mat_dims(a.shape());
        let (bb, k2, n) = mat_dims(b.shape());
        let shared = b.ndim() == 2;
        if k != k2 || (!shared && a.shape()[..a.ndim() - 2] != b.shape()[..b.ndim() - 2]) {
            return shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
        }
        debug_assert!(shared || ba == bb);
        let y = bmm(a.data(), b.data(), ba, m, k, n, shared);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.tape.push(
            "matmul",
            Tensor::from_parts(shape, y),
            &[self, other],
            Some(Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let bt = transposed(&b);
                    Tensor::from_parts(a.shape().to_vec(), bmm(g.data(), bt.data(), ba, m, n, k, shared))
                });
                let gb = needs[1].then(|| {
                    if shared {
                        // aᵀ·g with the batch folded into the contraction.
                        let a2 = a.reshape(&[ba * m, k]).expect("same size");
                        let at = transposed(&a2);
                        Tensor::from_parts(b.shape().to_vec(), bmm(at.data(), g.data(), 1, k, ba * m, n, true))
                    } else {
                        let at = transposed(&a);
                        Tensor::from_parts(b.shape().to_vec(), bmm(at.data(), g.data(), ba, k, m, n, false))
                    }
                });
                vec![ga, gb]
            })),
        )
    }

    /// `a[G, m, k] · b[G, n, k]ᵀ -> [G, m, n]`.
    pub fn matmul_nt(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.ndim() < 2 || a.ndim() != b.ndim() || a.shape()[..a.ndim() - 2] != b.shape()[..b.ndim() - 2] {
            return shape_err("matmul_nt", format!("{:?} x {:?}ᵀ", a.shape(), b.shape()));
        }
        let (g_, m, k) = mat_dims(a.shape());
        let (_, n, k2) = mat_dims(b.shape());
        if k != k2 {
            return shape_err("matmul_nt", format!("{:?} x {:?}ᵀ", a.shape(), b.shape()));
        }
        let bt = transposed(&b);
        let y = bmm(a.data(), bt.data(), g_, m, k, n, false);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.tape.push(
            "matmul_nt",
            Tensor::from_parts(shape, y),
            &[self, other],
            Some(Box::new(move |g, needs| {
                let ga = needs[0]
                    .then(|| Tensor::from_parts(a.shape().to_vec(), bmm(g.data(), b.data(), g_, m, n, k, false)));
                let gb = needs[1].then(|| {
                    let gt = transposed(g);
                    Tensor::from_parts(b.shape().to_vec(), bmm(gt.data(), a.data(), g_, n, m, k, false))
                });
                vec![ga, gb]
            })),
        )
    }

    /// Attention logits `q·kᵀ`; records the materialized score entries and
    /// their multiply-accumulates on the tape counters.
    pub fn scores(self, keys: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.matmul_nt(keys)?;
        let shape = self.shape();
        let d = *shape.last().unwrap() as u64;
        let elements = out.numel() as u64;
        self.tape.record_scores(elements, elements * d);
        Ok(out)
    }

    /// `x[..., k] · w[k, n] + bias[n]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add_bcast(b),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn identity_and_hand_cases() {
        let tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[2, 2], &[2.0, 3.0, 4.0, 5.0]).unwrap());
        assert_eq!(i.matmul(b).unwrap().value().data(), &[2.0, 3.0, 4.0, 5.0]);
        let r = tape.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let c = tape.constant(Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap());
        assert_eq!(r.matmul(c).unwrap().value().data(), &[11.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(a.matmul(b).is_err());
        let c = tape.constant(Tensor::zeros(&[4, 3, 2]));
        let d = tape.constant(Tensor::zeros(&[5, 2, 3]));
        assert!(c.matmul(d).is_err());
    }

    #[test]
    fn nt_equals_explicit_transpose() {
        let tape = Tape::<f64>::new();
        let a = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let b = Tensor::from_fn(&[2, 5, 4], |i| (i as f64).cos());
        let bt = b.transpose_last().unwrap();
        let x = tape.constant(a.clone()).matmul_nt(tape.constant(b)).unwrap().value();
        let y = tape.constant(a).matmul(tape.constant(bt)).unwrap().value();
        assert!(x.max_abs_diff(&y) < 1e-14);
    }

    #[test]
    fn scores_are_counted() {
        let tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros(&[3, 16, 8]));
        let k = tape.constant(Tensor::zeros(&[3, 16, 8]));
        q.scores(k).unwrap();
        let c = tape.counters();
        assert_eq!(c.score_elements, 3 * 256);
        assert_eq!(c.score_macs, 3 * 256 * 8);
    }
}
