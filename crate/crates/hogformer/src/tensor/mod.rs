//! Dense tensors with reverse-mode differentiation.
//!
//! Tensors are row-major, immutable after the forward op that produced them
//! (leaf data may be updated in place between graph builds, which is how the
//! optimizer works). Every differentiable op records its parents and a
//! backward closure; [`Tensor::backward`] replays the graph in reverse
//! topological order. Graph construction and backward are single-threaded
//! per graph; independent graphs can live on different threads.

mod attention;
mod check;
mod conv;
mod norm;
mod ops;
mod shuffle;
mod sort;

pub use attention::seg_attention;
pub use check::finite_diff_check;
pub use conv::{avg_pool, conv2d, crop_hw, reflect_pad};
pub use norm::{layer_norm, softmax_last};
pub use ops::{concat0, interleave0};
pub use shuffle::{pixel_shuffle_down, pixel_shuffle_up};
pub use sort::{argsort_stable, gather_last, invert_perm, scatter_last, IndexArray};

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

/// Element type for tensors: f32 for training/inference, f64 for gradient
/// checking.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>])>;

struct TensorInner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense n-dimensional array participating in a reverse-mode gradient graph.
pub struct Tensor<T: Scalar = f32> {
    inner: Rc<TensorInner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    /// New leaf tensor. `shape` extents must be positive and multiply to
    /// `data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor shape {:?} has a zero extent",
            shape
        );
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor::new(shape, vec![T::zero(); n], false)
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n = numel(&shape);
        Tensor::new(shape, vec![v; n], false)
    }

    pub fn scalar(v: T) -> Self {
        Tensor::new(vec![1], vec![v], false)
    }

    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64], requires_grad: bool) -> Self {
        Tensor::new(shape, data.iter().map(|&v| T::from_f64(v)).collect(), requires_grad)
    }

    /// Output of an op. Parents and the backward closure are dropped when no
    /// parent needs gradients, so inference graphs stay flat.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value in op output of shape {:?}",
            shape
        );
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Tensor::new(shape, data, false);
        }
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward: Some(backward),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the value buffer.
    pub fn data(&self) -> std::cell::Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    /// Overwrite the value buffer in place. Only meaningful for leaves between
    /// graph builds (parameter updates, finite-difference probes).
    pub fn set_data(&self, data: &[T]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), data.len());
        d.copy_from_slice(data);
    }

    pub fn set_value_at(&self, idx: usize, v: T) {
        self.inner.data.borrow_mut()[idx] = v;
    }

    pub fn value_at(&self, idx: usize) -> T {
        self.inner.data.borrow()[idx]
    }

    /// Current gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    /// Drop the accumulated gradient. Callers own gradient lifetimes:
    /// repeated backward without clearing accumulates.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accum_grad(&self, g: &[T]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => {
                *slot = Some(g.to_vec());
            }
        }
    }

    /// Same values, detached from the graph. Used for quantities that are
    /// constants by contract (sort keys, orientation fields).
    pub fn detach(&self) -> Tensor<T> {
        Tensor::new(self.inner.shape.clone(), self.to_vec(), false)
    }

    /// Reverse-mode sweep from a scalar. Every reachable `requires_grad`
    /// tensor receives a gradient buffer; grads accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        GradGraph::trace(self).backprop();
        Ok(())
    }
}

/// Topologically ordered record of the ops reachable from a root, replayed in
/// reverse to drive backpropagation.
pub struct GradGraph<T: Scalar> {
    order: Vec<Tensor<T>>,
    root: Tensor<T>,
}

impl<T: Scalar> GradGraph<T> {
    pub fn trace(root: &Tensor<T>) -> Self {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Iterative post-order DFS; recursion would overflow on deep graphs.
        enum Frame<T: Scalar> {
            Enter(Tensor<T>),
            Exit(Tensor<T>),
        }
        let mut stack = vec![Frame::Enter(root.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !t.requires_grad() || !visited.insert(t.id()) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in &t.inner.parents {
                        stack.push(Frame::Enter(p.clone()));
                    }
                }
                Frame::Exit(t) => order.push(t),
            }
        }
        GradGraph { order, root: root.clone() }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn backprop(&self) {
        // Intermediate grads are per-sweep scratch; only leaves accumulate
        // across repeated backward calls.
        for t in &self.order {
            if t.inner.backward.is_some() {
                *t.inner.grad.borrow_mut() = None;
            }
        }
        self.root.accum_grad(&[T::one()]);
        for t in self.order.iter().rev() {
            if let Some(back) = &t.inner.backward {
                let g = t.inner.grad.borrow();
                if let Some(g) = g.as_ref() {
                    back(g, &t.inner.parents);
                }
            }
        }
    }
}
