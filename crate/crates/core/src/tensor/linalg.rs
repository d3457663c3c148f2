use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

// Row-major GEMM kernels. All accumulate into `c`.

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<F: Scalar>(m: usize, n: usize, k: usize, a: &[F], b: &[F], c: &mut [F]) {
    gemm_blocked(m, n, k, a, (k, 1), b, c);
}

const MR: usize = 4;
const NR: usize = 8;

/// `c[m,n] += A · b[k,n]` where `A[i,p] = a[i·rs + p·ps]`. Tiles of
/// `MR × NR` outputs are accumulated in registers across the whole `k` loop.
fn gemm_blocked<F: Scalar>(m: usize, n: usize, k: usize, a: &[F], (rs, ps): (usize, usize), b: &[F], c: &mut [F]) {
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[F::zero(); NR]; MR];
            for p in 0..k {
                let bv: &[F; NR] = b[p * n + j..][..NR].try_into().expect("NR columns");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * rs + p * ps];
                    for q in 0..NR {
                        row[q] += av * bv[q];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let cr = &mut c[(i + r) * n + j..][..NR];
                for q in 0..NR {
                    cr[q] += row[q];
                }
            }
            j += NR;
        }
        if j < n {
            edge(i..i + MR, j, n, k, a, (rs, ps), b, c);
        }
        i += MR;
    }
    if i < m {
        edge(i..m, 0, n, k, a, (rs, ps), b, c);
    }
}

/// Rows `rows`, columns `j0..n` of [`gemm_blocked`], one row at a time.
#[allow(clippy::too_many_arguments)]
fn edge<F: Scalar>(
    rows: std::ops::Range<usize>,
    j0: usize,
    n: usize,
    k: usize,
    a: &[F],
    (rs, ps): (usize, usize),
    b: &[F],
    c: &mut [F],
) {
    for i in rows {
        let crow = &mut c[i * n + j0..(i + 1) * n];
        for p in 0..k {
            let av = a[i * rs + p * ps];
            let brow = &b[p * n + j0..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += av * bj;
            }
        }
    }
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt<F: Scalar>(m: usize, n: usize, k: usize, a: &[F], b: &[F], c: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m,n] += a[k,m]ᵀ · b[k,n]`
pub(crate) fn gemm_tn<F: Scalar>(m: usize, n: usize, k: usize, a: &[F], b: &[F], c: &mut [F]) {
    gemm_blocked(m, n, k, a, (1, m), b, c);
}

/// Eight independent accumulators so the loop vectorizes; summation order is
/// fixed, so results are reproducible.
#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = F::zero();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    acc.iter().fold(s, |t, &v| t + v)
}

impl<F: Scalar> Tensor<F> {
    /// `[m,k] · [k,n] -> [m,n]`
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::InnerDimension {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm_nn(m, n, k, self.data(), other.data(), &mut out);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(out, vec![m, n], "matmul", vec![self.clone(), other.clone()], move |_, g| {
            let ga = a.requires_grad().then(|| {
                let mut d = vec![F::zero(); m * k];
                gemm_nt(m, k, n, g, b.data(), &mut d);
                d
            });
            let gb = b.requires_grad().then(|| {
                let mut d = vec![F::zero(); k * n];
                gemm_tn(k, n, m, a.data(), g, &mut d);
                d
            });
            vec![ga, gb]
        }))
    }

    /// Batched matrix product `[b,m,k] · [b,k,n] -> [b,m,n]`.
    pub fn bmm(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::InnerDimension {
                op: "bmm",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); batch * m * n];
        for t in 0..batch {
            gemm_nn(
                m,
                n,
                k,
                &self.data()[t * m * k..][..m * k],
                &other.data()[t * k * n..][..k * n],
                &mut out[t * m * n..][..m * n],
            );
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(out, vec![batch, m, n], "bmm", vec![self.clone(), other.clone()], move |_, g| {
            let ga = a.requires_grad().then(|| {
                let mut d = vec![F::zero(); batch * m * k];
                for t in 0..batch {
                    gemm_nt(m, k, n, &g[t * m * n..][..m * n], &b.data()[t * k * n..][..k * n], &mut d[t * m * k..][..m * k]);
                }
                d
            });
            let gb = b.requires_grad().then(|| {
                let mut d = vec![F::zero(); batch * k * n];
                for t in 0..batch {
                    gemm_tn(k, n, m, &a.data()[t * m * k..][..m * k], &g[t * m * n..][..m * n], &mut d[t * k * n..][..k * n]);
                }
                d
            });
            vec![ga, gb]
        }))
    }
}
