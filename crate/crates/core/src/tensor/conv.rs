use super::{gemm_nn, gemm_nt, gemm_tn, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Geometry of a strided, zero-padded 2-D correlation over one image.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Calls `f(col_index, image_index)` for every in-bounds tap of every
    /// image in a batch of `n`. Columns are laid out `[patch, n · positions]`.
    #[inline]
    fn for_each_tap(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let pos = self.positions();
        let width = n * pos;
        let img_len = self.channels * self.h * self.w;
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.oh {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let img_row = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.ow {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let col = row * width + oy * self.ow + ox;
                            let img = img_row + ix as usize;
                            for b in 0..n {
                                f(col + b * pos, img + b * img_len);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<F: Scalar>(&self, imgs: &[F], n: usize) -> Vec<F> {
        let mut cols = vec![F::zero(); self.patch() * n * self.positions()];
        self.for_each_tap(n, |ci, ii| cols[ci] = imgs[ii]);
        cols
    }

    fn col2im<F: Scalar>(&self, cols: &[F], imgs: &mut [F], n: usize) {
        self.for_each_tap(n, |ci, ii| imgs[ii] += cols[ci]);
    }
}

/// `[n, c, pos]` to `[c, n · pos]`.
fn batch_to_rows<F: Scalar>(x: &[F], n: usize, c: usize, pos: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        for b in 0..n {
            out.extend_from_slice(&x[(b * c + ch) * pos..][..pos]);
        }
    }
    out
}

/// `[c, n · pos]` to `[n, c, pos]`.
fn rows_to_batch<F: Scalar>(x: &[F], n: usize, c: usize, pos: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for ch in 0..c {
            out.extend_from_slice(&x[(ch * n + b) * pos..][..pos]);
        }
    }
    out
}

fn conv_output(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = (input + 2 * padding).checked_sub(kernel)?;
    (stride > 0 && span % stride == 0).then_some(span / stride + 1)
}

fn rank4(op: &'static str, t: &[usize], k: &[usize]) -> Result<()> {
    if t.len() != 4 || k.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op,
            left: t.to_vec(),
            right: k.to_vec(),
        });
    }
    Ok(())
}

impl<F: Scalar> Tensor<F> {
    /// Cross-correlation `[n,ci,h,w] ⋆ [co,ci,kh,kw] -> [n,co,h',w']`.
    pub fn conv2d(&self, kernel: &Tensor<F>, stride: usize, padding: usize) -> Result<Tensor<F>> {
        let (xs, ks) = (self.shape(), kernel.shape());
        rank4("conv2d", xs, ks)?;
        if xs[1] != ks[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: xs.to_vec(),
                right: ks.to_vec(),
            });
        }
        let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ks[0], ks[2], ks[3]);
        let non_integral = || TensorError::NonIntegralOutput {
            op: "conv2d",
            input: xs.to_vec(),
            kernel: ks.to_vec(),
            stride,
            padding,
        };
        let oh = conv_output(h, kh, stride, padding).ok_or_else(non_integral)?;
        let ow = conv_output(w, kw, stride, padding).ok_or_else(non_integral)?;
        let geo = Geometry {
            channels: ci,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        };
        let (patch, pos) = (geo.patch(), geo.positions());
        let width = n * pos;
        let cols = geo.im2col(self.data(), n);
        let mut out = vec![F::zero(); co * width];
        gemm_nn(co, width, patch, kernel.data(), &cols, &mut out);
        let out = rows_to_batch(&out, n, co, pos);
        let (x, k) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            out,
            vec![n, co, oh, ow],
            "conv2d",
            vec![self.clone(), kernel.clone()],
            move |_, g| {
                let g = batch_to_rows(g, n, co, pos);
                let gk = k.requires_grad().then(|| {
                    let mut gk = vec![F::zero(); k.numel()];
                    gemm_nt(co, patch, width, &g, &cols, &mut gk);
                    gk
                });
                let gx = x.requires_grad().then(|| {
                    let mut dcols = vec![F::zero(); patch * width];
                    gemm_tn(patch, width, co, k.data(), &g, &mut dcols);
                    let mut gx = vec![F::zero(); x.numel()];
                    geo.col2im(&dcols, &mut gx, n);
                    gx
                });
                vec![gx, gk]
            },
        ))
    }

    /// Transposed convolution `[n,ci,h,w]` with kernel `[ci,co,kh,kw]`,
    /// producing `[n,co,(h-1)·stride-2·padding+kh, …]`. It is the adjoint of
    /// [`Tensor::conv2d`] with the same kernel and hyper-parameters.
    pub fn conv_transpose2d(&self, kernel: &Tensor<F>, stride: usize, padding: usize) -> Result<Tensor<F>> {
        let (xs, ks) = (self.shape(), kernel.shape());
        rank4("conv_transpose2d", xs, ks)?;
        if xs[1] != ks[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                left: xs.to_vec(),
                right: ks.to_vec(),
            });
        }
        let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ks[1], ks[2], ks[3]);
        let size = |len: usize, k: usize| ((len - 1) * stride + k).checked_sub(2 * padding).filter(|&v| v > 0);
        let bad = || TensorError::NonIntegralOutput {
            op: "conv_transpose2d",
            input: xs.to_vec(),
            kernel: ks.to_vec(),
            stride,
            padding,
        };
        if stride == 0 {
            return Err(bad());
        }
        let oh = size(h, kh).ok_or_else(bad)?;
        let ow = size(w, kw).ok_or_else(bad)?;
        // the forward correlation this operator is the adjoint of
        let geo = Geometry {
            channels: co,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            padding,
            oh: h,
            ow: w,
        };
        let (patch, pos) = (geo.patch(), geo.positions());
        let width = n * pos;
        let xr = batch_to_rows(self.data(), n, ci, pos);
        let mut dcols = vec![F::zero(); patch * width];
        gemm_tn(patch, width, ci, kernel.data(), &xr, &mut dcols);
        let mut out = vec![F::zero(); n * co * oh * ow];
        geo.col2im(&dcols, &mut out, n);
        let (x, k) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            out,
            vec![n, co, oh, ow],
            "conv_transpose2d",
            vec![self.clone(), kernel.clone()],
            move |_, g| {
                let cols = geo.im2col(g, n);
                let gx = x.requires_grad().then(|| {
                    let mut gx = vec![F::zero(); ci * width];
                    gemm_nn(ci, width, patch, k.data(), &cols, &mut gx);
                    rows_to_batch(&gx, n, ci, pos)
                });
                let gk = k.requires_grad().then(|| {
                    let mut gk = vec![F::zero(); k.numel()];
                    gemm_nt(ci, patch, width, &xr, &cols, &mut gk);
                    gk
                });
                vec![gx, gk]
            },
        ))
    }
}
