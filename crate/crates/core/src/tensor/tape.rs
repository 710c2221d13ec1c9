//! The computation tape for reverse-mode differentiation.

use super::Tensor;
use crate::error::{Error, Result};
use std::cell::RefCell;

pub(crate) struct BackwardArgs<'a> {
    pub inputs: &'a [Tensor],
    pub output: &'a Tensor,
    /// Gradient of the loss with respect to the entry's output.
    pub grad: &'a [f32],
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>)>;

struct Entry {
    output: Tensor,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

/// Ordered record of executed operations.
///
/// Execution order is a topological order of the define-by-run graph, so
/// replaying entries back-to-front visits every node after all of its
/// consumers. Dropping or clearing the tape releases the recorded
/// intermediate tensors.
#[derive(Default)]
pub struct Tape {
    entries: RefCell<Vec<Entry>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.borrow().is_empty()
    }

    /// Drop every recorded entry, releasing intermediate buffers.
    pub fn clear(&self) {
        self.entries.borrow_mut().clear();
    }

    pub(crate) fn record(&self, output: Tensor, inputs: Vec<Tensor>, backward: BackwardFn) {
        self.entries.borrow_mut().push(Entry {
            output,
            inputs,
            backward,
        });
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Gradients of intermediate (non-leaf) tensors are reset before the
    /// walk, so repeated calls accumulate exactly once per call into the
    /// `requires_grad` leaves.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        if !loss.requires_grad() {
            return Err(Error::invalid(
                "backward",
                "loss does not participate in gradients (no tracked inputs on this tape)",
            ));
        }
        let entries = self.entries.borrow();
        for e in entries.iter() {
            e.output.clear_grad();
        }
        loss.accum_grad(&[1.0]);
        for e in entries.iter().rev() {
            let grad = e.output.grad();
            let Some(grad) = grad else { continue };
            (e.backward)(&BackwardArgs {
                inputs: &e.inputs,
                output: &e.output,
                grad: &grad,
            });
        }
        Ok(())
    }
}
