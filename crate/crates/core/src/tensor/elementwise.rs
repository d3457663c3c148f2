use std::sync::Arc;

use super::{numel, Result, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    Sqrt,
    Abs,
    /// `x * s`
    Scale(f64),
    /// `x + s`
    Shift(f64),
    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    Clamp(f64, f64),
}

/// Trailing-dimension broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How a broadcast input is addressed from the output's flat index.
enum Index {
    Same,
    Scalar,
    Map(Arc<Vec<usize>>),
}

impl Index {
    fn new(out: &[usize], input: &[usize]) -> Self {
        if out == input {
            return Index::Same;
        }
        if numel(input) == 1 {
            return Index::Scalar;
        }
        let rank = out.len();
        let pad = rank - input.len();
        // input strides aligned to the output rank, 0 where broadcast
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for i in (0..input.len()).rev() {
            strides[i + pad] = if input[i] == 1 { 0 } else { acc };
            acc *= input[i];
        }
        let total = numel(out);
        let mut map = Vec::with_capacity(total);
        let mut counter = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..total {
            map.push(offset);
            for d in (0..rank).rev() {
                counter[d] += 1;
                offset += strides[d];
                if counter[d] < out[d] {
                    break;
                }
                offset -= strides[d] * out[d];
                counter[d] = 0;
            }
        }
        Index::Map(Arc::new(map))
    }

    #[inline]
    fn at(&self, o: usize) -> usize {
        match self {
            Index::Same => o,
            Index::Scalar => 0,
            Index::Map(m) => m[o],
        }
    }
}

impl Clone for Index {
    fn clone(&self) -> Self {
        match self {
            Index::Same => Index::Same,
            Index::Scalar => Index::Scalar,
            Index::Map(m) => Index::Map(Arc::clone(m)),
        }
    }
}

impl<F: Scalar> Tensor<F> {
    /// Binary elementwise operation with trailing-dimension broadcasting.
    pub fn binary(&self, op: BinaryOp, other: &Tensor<F>) -> Result<Tensor<F>> {
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        let out_shape =
            broadcast_shape(self.shape(), other.shape()).ok_or_else(|| TensorError::ShapeMismatch {
                op: name,
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            })?;
        let n = numel(&out_shape);
        let ia = Index::new(&out_shape, self.shape());
        let ib = Index::new(&out_shape, other.shape());
        let (a, b) = (self.data(), other.data());
        let f: fn(F, F) -> F = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
        };
        let data: Vec<F> = match (&ia, &ib) {
            (Index::Same, Index::Same) => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|o| f(a[ia.at(o)], b[ib.at(o)])).collect(),
        };

        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            out_shape,
            name,
            vec![self.clone(), other.clone()],
            move |_out, g| {
                let (a, b) = (pa.data(), pb.data());
                let mut ga = pa.requires_grad().then(|| vec![F::zero(); pa.numel()]);
                let mut gb = pb.requires_grad().then(|| vec![F::zero(); pb.numel()]);
                for (o, &go) in g.iter().enumerate() {
                    let (ai, bi) = (ia.at(o), ib.at(o));
                    let (da, db) = match op {
                        BinaryOp::Add => (go, go),
                        BinaryOp::Sub => (go, -go),
                        BinaryOp::Mul => (go * b[bi], go * a[ai]),
                        BinaryOp::Div => (go / b[bi], -go * a[ai] / (b[bi] * b[bi])),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[ai] += da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bi] += db;
                    }
                }
                vec![ga, gb]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(BinaryOp::Div, other)
    }

    pub fn unary(&self, op: UnaryOp) -> Tensor<F> {
        let x = self.data();
        let forward = |v: F| -> F {
            match op {
                UnaryOp::Neg => -v,
                UnaryOp::Relu => v.max(F::zero()),
                UnaryOp::LeakyRelu(a) => {
                    if v > F::zero() {
                        v
                    } else {
                        v * F::of(a)
                    }
                }
                UnaryOp::Sigmoid => F::one() / (F::one() + (-v).exp()),
                UnaryOp::Tanh => v.tanh(),
                UnaryOp::Exp => v.exp(),
                UnaryOp::Log => v.ln(),
                UnaryOp::Square => v * v,
                UnaryOp::Sqrt => v.sqrt(),
                UnaryOp::Abs => v.abs(),
                UnaryOp::Scale(s) => v * F::of(s),
                UnaryOp::Shift(s) => v + F::of(s),
                UnaryOp::Clamp(lo, hi) => v.max(F::of(lo)).min(F::of(hi)),
            }
        };
        let data: Vec<F> = x.iter().map(|&v| forward(v)).collect();
        let name = match op {
            UnaryOp::Neg => "neg",
            UnaryOp::Relu => "relu",
            UnaryOp::LeakyRelu(_) => "leaky_relu",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Square => "square",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Scale(_) => "scale",
            UnaryOp::Shift(_) => "shift",
            UnaryOp::Clamp(..) => "clamp",
        };
        let input = self.clone();
        Tensor::from_op(data, self.shape().to_vec(), name, vec![self.clone()], move |out, g| {
            let x = input.data();
            let d: Vec<F> = (0..g.len())
                .map(|i| {
                    let (v, y) = (x[i], out[i]);
                    let local = match op {
                        UnaryOp::Neg => -F::one(),
                        UnaryOp::Relu => {
                            if v > F::zero() {
                                F::one()
                            } else {
                                F::zero()
                            }
                        }
                        UnaryOp::LeakyRelu(a) => {
                            if v > F::zero() {
                                F::one()
                            } else {
                                F::of(a)
                            }
                        }
                        UnaryOp::Sigmoid => y * (F::one() - y),
                        UnaryOp::Tanh => F::one() - y * y,
                        UnaryOp::Exp => y,
                        UnaryOp::Log => F::one() / v,
                        UnaryOp::Square => v + v,
                        UnaryOp::Sqrt => {
                            if y > F::zero() {
                                F::of(0.5) / y
                            } else {
                                F::zero()
                            }
                        }
                        UnaryOp::Abs => {
                            if v > F::zero() {
                                F::one()
                            } else if v < F::zero() {
                                -F::one()
                            } else {
                                F::zero()
                            }
                        }
                        UnaryOp::Scale(s) => F::of(s),
                        UnaryOp::Shift(_) => F::one(),
                        UnaryOp::Clamp(lo, hi) => {
                            if v > F::of(lo) && v < F::of(hi) {
                                F::one()
                            } else {
                                F::zero()
                            }
                        }
                    };
                    g[i] * local
                })
                .collect();
            vec![Some(d)]
        })
    }

    pub fn neg(&self) -> Tensor<F> {
        self.unary(UnaryOp::Neg)
    }

    pub fn relu(&self) -> Tensor<F> {
        self.unary(UnaryOp::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<F> {
        self.unary(UnaryOp::LeakyRelu(slope))
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor<F> {
        self.unary(UnaryOp::Tanh)
    }

    pub fn exp(&self) -> Tensor<F> {
        self.unary(UnaryOp::Exp)
    }

    pub fn log(&self) -> Tensor<F> {
        self.unary(UnaryOp::Log)
    }

    pub fn square(&self) -> Tensor<F> {
        self.unary(UnaryOp::Square)
    }

    pub fn sqrt(&self) -> Tensor<F> {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn abs(&self) -> Tensor<F> {
        self.unary(UnaryOp::Abs)
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor<F> {
        self.unary(UnaryOp::Scale(s))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<F> {
        self.unary(UnaryOp::Shift(s))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<F> {
        self.unary(UnaryOp::Clamp(lo, hi))
    }
}
