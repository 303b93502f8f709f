//! Plain and batched matrix products.

use crate::autodiff::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct MatDims {
    /// `None` for rank-2 operands, `Some(b)` for `[b, ., .]` operands.
    batch: Option<usize>,
    m: usize,
    k: usize,
    n: usize,
}

impl MatDims {
    fn batches(&self) -> usize {
        self.batch.unwrap_or(1)
    }
}

fn split(shape: &[usize]) -> Option<(Option<usize>, usize, usize)> {
    match *shape {
        [r, c] => Some((None, r, c)),
        [b, r, c] => Some((Some(b), r, c)),
        _ => None,
    }
}

impl<T: Scalar> Tape<T> {
    /// `a · b` for `[M, K] x [K, N]`, or batched `[B, M, K] x [B, K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes the last two axes.
    pub fn matmul_t(&mut self, a: Var, trans_a: bool, b: Var, trans_b: bool) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let mismatch = || {
            Error::shape(
                "matmul",
                format!(
                    "cannot multiply {:?}{} by {:?}{}",
                    av.shape(),
                    if trans_a { "^T" } else { "" },
                    bv.shape(),
                    if trans_b { "^T" } else { "" }
                ),
            )
        };
        let (Some((ba, ra, ca)), Some((bb, rb, cb))) = (split(av.shape()), split(bv.shape()))
        else {
            return Err(mismatch());
        };
        if ba != bb {
            return Err(mismatch());
        }
        let (m, ka) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if ka != kb {
            return Err(mismatch());
        }
        let dims = MatDims {
            batch: ba,
            m,
            k: ka,
            n,
        };
        let mut out = vec![T::zero(); dims.batches() * m * n];
        for i in 0..dims.batches() {
            T::gemm(
                m,
                ka,
                n,
                &av.data()[i * m * ka..(i + 1) * m * ka],
                trans_a,
                &bv.data()[i * ka * n..(i + 1) * ka * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                T::zero(),
            );
        }
        let shape = match ba {
            Some(bt) => vec![bt, m, n],
            None => vec![m, n],
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                dims,
            },
        ))
    }
}

pub(crate) fn backward<T: Scalar>(
    a: Var,
    b: Var,
    trans_a: bool,
    trans_b: bool,
    dims: MatDims,
    grad: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let MatDims { m, k, n, .. } = dims;
    let av = sink.value(a);
    let bv = sink.value(b);
    let dc = grad.data();

    if sink.wants(a) {
        let mut da = vec![T::zero(); av.numel()];
        for i in 0..dims.batches() {
            let dci = &dc[i * m * n..(i + 1) * m * n];
            let bi = &bv.data()[i * k * n..(i + 1) * k * n];
            let dai = &mut da[i * m * k..(i + 1) * m * k];
            if trans_a {
                // dA (stored [k, m]) = op(B) · dC^T
                T::gemm(k, n, m, bi, trans_b, dci, true, dai, T::zero());
            } else {
                // dA = dC · op(B)^T
                T::gemm(m, n, k, dci, false, bi, !trans_b, dai, T::zero());
            }
        }
        sink.add(a, Tensor::new(av.shape(), da).expect("a shape"));
    }
    if sink.wants(b) {
        let mut db = vec![T::zero(); bv.numel()];
        for i in 0..dims.batches() {
            let dci = &dc[i * m * n..(i + 1) * m * n];
            let ai = &av.data()[i * m * k..(i + 1) * m * k];
            let dbi = &mut db[i * k * n..(i + 1) * k * n];
            if trans_b {
                // dB (stored [n, k]) = dC^T · op(A)
                T::gemm(n, m, k, dci, true, ai, trans_a, dbi, T::zero());
            } else {
                // dB = op(A)^T · dC
                T::gemm(k, m, n, ai, !trans_a, dci, false, dbi, T::zero());
            }
        }
        sink.add(b, Tensor::new(bv.shape(), db).expect("b shape"));
    }
}
