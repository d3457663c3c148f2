use super::{check_axis, numel, split_axis, Result, Tensor, TensorError};
use crate::scalar::Scalar;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `x` (shape `shape`) into the axis order `axes`.
fn permute_data<F: Copy>(x: &[F], shape: &[usize], axes: &[usize]) -> Vec<F> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..x.len() {
        out.push(x[offset]);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += step[d];
            if counter[d] < out_shape[d] {
                break;
            }
            offset -= step[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    out
}

impl<F: Scalar> Tensor<F> {
    /// Row-major reshape (always a copy).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if numel(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                len: self.numel(),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            |_, g| vec![Some(g.to_vec())],
        ))
    }

    /// Collapses everything after the leading (batch) axis.
    pub fn flatten_batch(&self) -> Result<Tensor<F>> {
        let n = self.shape()[0];
        self.reshape(&[n, self.numel() / n])
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("{axes:?} is not a permutation of rank {rank}"),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let data = permute_data(self.data(), self.shape(), axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op(data, out_shape, "permute", vec![self.clone()], move |_, g| {
            vec![Some(permute_data(g, &grad_shape, &inverse))]
        }))
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor<F>> {
        if self.rank() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        self.permute(&[1, 0])
    }

    pub fn concat(parts: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        check_axis("concat", axis, first.rank())?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(data, shape, "concat", parts.to_vec(), move |_, g| {
            let mut grads: Vec<Vec<F>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &len) in grads.iter_mut().zip(&lens) {
                    gp.extend_from_slice(&g[off..off + len * inner]);
                    off += len * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
        check_axis("slice", axis, self.rank())?;
        let (outer, full, inner) = split_axis(self.shape(), axis);
        if len == 0 || start + len > full {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{} outside axis of length {full}", start + len),
            });
        }
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, "slice", vec![self.clone()], move |_, g| {
            let mut d = vec![F::zero(); outer * full * inner];
            for o in 0..outer {
                d[(o * full + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
            }
            vec![Some(d)]
        }))
    }
}
