//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are reference-counted handles around a row-major `Vec<f32>`.
//! Differentiable operations take an optional [`Tape`]; when a tape is
//! supplied and any input participates in gradients, the op records a
//! backward closure on it. [`Tape::backward`] then replays the recorded
//! entries in reverse execution order (which is a reverse topological
//! order for a define-by-run graph) and accumulates gradients on every
//! `requires_grad` leaf.
//!
//! Design constraints honored here:
//! - every op materializes its output (no views or stride aliasing);
//! - accumulating loops (reductions, matmul, conv) run in f64 and round
//!   to f32 on store;
//! - a tape and the tensors of its in-progress graph stay on one thread
//!   (`Tensor` is intentionally `!Send`); parallelism lives inside the
//!   op kernels, partitioned so each output element is produced by
//!   exactly one deterministic sequential loop.

mod conv;
mod ops;
mod tape;

pub use conv::{conv2d, Conv2dSpec};
pub use ops::*;
pub use tape::Tape;

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

/// Dense N-dimensional array of f32 with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    leaf: bool,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, leaf: bool) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                leaf,
            }),
        }
    }

    /// A constant (gradient-free) tensor from row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "from_vec",
                format!("shape {:?} wants {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Tensor::build(shape.to_vec(), data, false, true))
    }

    /// A trainable leaf: `requires_grad` is set and gradients accumulate on it.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "param",
                format!("shape {:?} wants {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Tensor::build(shape.to_vec(), data, true, true))
    }

    pub(crate) fn op_output(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Tensor {
        Tensor::build(shape, data, requires_grad, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel(shape)], false, true)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        Tensor::build(shape.to_vec(), vec![value; numel(shape)], false, true)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::build(vec![], vec![value], false, true)
    }

    /// Standard-normal draws.
    pub fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let mut data = vec![0.0f32; numel(shape)];
        crate::rng::fill_standard_normal(rng, &mut data);
        Tensor::build(shape.to_vec(), data, false, true)
    }

    /// Uniform draws in [lo, hi).
    pub fn rand_uniform(rng: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        use rand::Rng as _;
        let data = (0..numel(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::build(shape.to_vec(), data, false, true)
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

    pub fn is_leaf(&self) -> bool {
        self.inner.leaf
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Scalar extraction; panics if the tensor is not single-element.
    pub fn item(&self) -> f32 {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.inner.shape);
        d[0]
    }

    /// Overwrite the payload in place. Only sensible for leaves (parameter
    /// updates, buffer reuse); op outputs are never mutated.
    pub fn set_data(&self, new: &[f32]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    /// Apply an in-place update to the payload (optimizer steps).
    pub fn update_data(&self, f: impl FnOnce(&mut [f32])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add a contribution into this tensor's gradient buffer.
    pub(crate) fn accum_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// A gradient-free copy sharing nothing with the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.inner.shape.clone(), self.to_vec(), false, true)
    }

    /// Detached deep copy that keeps `requires_grad` (used by checkpoints).
    pub fn deep_clone(&self) -> Tensor {
        Tensor::build(
            self.inner.shape.clone(),
            self.to_vec(),
            self.inner.requires_grad,
            true,
        )
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 4]).is_ok());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let t = Tensor::param(&[3], vec![0.0; 3]).unwrap();
        t.accum_grad(&[1.0, 2.0, 3.0]);
        t.accum_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![2.0, 3.0, 4.0]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn scalar_item() {
        assert_eq!(Tensor::scalar(4.5).item(), 4.5);
    }
}
