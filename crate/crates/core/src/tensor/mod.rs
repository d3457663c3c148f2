//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every operation that touches a tensor with `requires_grad` records a
//! backward closure and its parents. [`Tensor::backward`] walks the recorded
//! graph in reverse topological order (see [`Tape`]) and accumulates adjoints
//! into the leaves.
//!
//! Tensors are immutable once built. Only the gradient accumulator of a leaf
//! changes, so a tensor can be shared across threads as long as no two
//! threads run `backward` through it at the same time.

mod autograd;
mod conv;
mod elementwise;
mod error;
mod gradcheck;
mod linalg;
mod reduce;
mod shape_ops;

use std::fmt;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

pub use autograd::Tape;
pub use elementwise::{BinaryOp, UnaryOp};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};

pub(crate) use linalg::{gemm_nn, gemm_nt, gemm_tn};

type BackwardFn<F> = dyn Fn(&[F], &[F]) -> Vec<Option<Vec<F>>> + Send + Sync;

pub(crate) struct GradFn<F: Scalar> {
    pub(crate) name: &'static str,
    pub(crate) parents: Vec<Tensor<F>>,
    /// `(output data, output adjoint) -> one adjoint per parent`.
    /// Parents that do not require grad may receive `None`.
    pub(crate) backward: Box<BackwardFn<F>>,
}

pub(crate) struct Node<F: Scalar> {
    data: Vec<F>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<F>>>,
    grad_fn: Option<GradFn<F>>,
}

pub struct Tensor<F: Scalar>(Arc<Node<F>>);

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<F> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self::raw(data, shape.to_vec(), false))
    }

    pub(crate) fn raw(data: Vec<F>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            data,
            shape,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    /// Builds the result of an operation. The backward closure is kept only
    /// when at least one parent participates in differentiation.
    pub(crate) fn from_op<B>(
        data: Vec<F>,
        shape: Vec<usize>,
        name: &'static str,
        parents: Vec<Tensor<F>>,
        backward: B,
    ) -> Self
    where
        B: Fn(&[F], &[F]) -> Vec<Option<Vec<F>>> + Send + Sync + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            name,
            parents,
            backward: Box::new(backward),
        });
        Tensor(Arc::new(Node {
            data,
            shape,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    pub fn scalar(v: F) -> Self {
        Self::raw(vec![v], vec![1], false)
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        Self::raw(vec![v; numel(shape)], shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn ones_like(other: &Tensor<F>) -> Self {
        Self::ones(other.shape())
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::of(z)
            })
            .collect();
        Self::raw(data, shape.to_vec(), false)
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| F::of(rng.random_range(lo..hi)))
            .collect();
        Self::raw(data, shape.to_vec(), false)
    }

    /// Turns the tensor into a differentiable leaf. Any recorded history is
    /// dropped.
    pub fn requires_grad_(self) -> Self {
        match Arc::try_unwrap(self.0) {
            Ok(node) => Self::raw(node.data, node.shape, true),
            Err(shared) => Self::raw(shared.data.clone(), shared.shape.clone(), true),
        }
    }

    /// A leaf copy with the given gradient participation.
    pub fn leaf(&self, requires_grad: bool) -> Self {
        Self::raw(self.0.data.clone(), self.0.shape.clone(), requires_grad)
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Self {
        if !self.requires_grad() {
            return self.clone();
        }
        self.leaf(false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[F]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn node_id(&self) -> usize {
        Arc::as_ptr(&self.0) as *const () as usize
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<F>> {
        self.0.grad_fn.as_ref()
    }

    /// Name of the operation that produced this tensor (`"leaf"` otherwise).
    pub fn op_name(&self) -> &'static str {
        self.0.grad_fn.as_ref().map_or("leaf", |g| g.name)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Casts to another scalar type as a non-differentiable tensor.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor::raw(
            self.0.data.iter().map(|&v| G::of(v.as_f64())).collect(),
            self.0.shape.clone(),
            false,
        )
    }
}

pub(crate) fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(TensorError::AxisOutOfRange { op, axis, rank })
    } else {
        Ok(())
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}
