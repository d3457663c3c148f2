use super::{check_axis, split_axis, Result, Tensor};
use crate::scalar::Scalar;

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
    }
    s
}

impl<F: Scalar> Tensor<F> {
    pub fn sum_all(&self) -> Tensor<F> {
        let total: F = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![total], vec![1], "sum", vec![self.clone()], move |_, g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<F> {
        self.sum_all().mul_scalar(1.0 / self.numel() as f64)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<F>> {
        check_axis("sum_axis", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x[(o * len + a) * inner..][..inner];
                let dst = &mut out[o * inner..][..inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        Ok(Tensor::from_op(
            out,
            reduced_shape(self.shape(), axis, keepdim),
            "sum_axis",
            vec![self.clone()],
            move |_, g| {
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        d.extend_from_slice(&g[o * inner..][..inner]);
                    }
                }
                vec![Some(d)]
            },
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<F>> {
        check_axis("mean_axis", axis, self.rank())?;
        let len = self.shape()[axis];
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / len as f64))
    }

    /// Euclidean norm along `axis`. The gradient at a zero vector is taken
    /// as zero.
    pub fn norm_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<F>> {
        check_axis("norm_axis", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + a) * inner + i];
                    out[o * inner + i] += v * v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        let input = self.clone();
        Ok(Tensor::from_op(
            out,
            reduced_shape(self.shape(), axis, keepdim),
            "norm",
            vec![self.clone()],
            move |norms, g| {
                let x = input.data();
                let mut d = vec![F::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let n = norms[o * inner + i];
                        if n == F::zero() {
                            continue;
                        }
                        let s = g[o * inner + i] / n;
                        for a in 0..len {
                            let k = (o * len + a) * inner + i;
                            d[k] = s * x[k];
                        }
                    }
                }
                vec![Some(d)]
            },
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![F::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let m = (0..len).map(|a| x[idx(a)]).fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for a in 0..len {
                    let e = (x[idx(a)] - m).exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    out[idx(a)] /= z;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            move |y, g| {
                let mut d = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: F = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                        for a in 0..len {
                            d[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![Some(d)]
            },
        ))
    }
}
