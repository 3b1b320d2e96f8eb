//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Graphs are built define-by-run: every op that consumes a tensor requiring
//! gradients records its parents and a backward closure on the output node.
//! `backward()` on a scalar walks the DAG once in reverse topological order,
//! accumulating (summing) gradients into every contributing node. Tensors are
//! immutable after forward construction; only parameter buffers are rewritten,
//! by the optimizer, between steps.

mod conv;
mod elementwise;
mod gradcheck;
mod linalg;
mod matmul;
mod movement;
mod norm;
mod reduce;
mod sample;

pub use gradcheck::grad_check;
pub use linalg::sym3_eigenvalues;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type BackFn<T> = Box<dyn Fn(&[T], &[Tensor<T>])>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    back: Option<BackFn<T>>,
}

/// Handle to a node in the computation graph. Cloning is cheap (shared Rc).
pub struct Tensor<T: Scalar = f32>(Rc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.0.shape, self.0.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    // ---- construction ----

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "from_vec",
                shape,
                format!("buffer has {} elements", data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![T::ZERO; n], false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n: usize = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![v; n], false)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn scalar(v: T) -> Self {
        Self::leaf(vec![1], vec![v], false)
    }

    /// Leaf that accumulates gradients (a learnable value).
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "param",
                shape,
                format!("buffer has {} elements", data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, true))
    }

    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Inner {
            id: fresh_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            back: None,
        }))
    }

    /// Interior op node. Records parents and backward only when some parent
    /// participates in gradient flow; otherwise the graph is pruned here.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        back: BackFn<T>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        if !requires_grad {
            return Self::leaf(shape, data, false);
        }
        Tensor(Rc::new(Inner {
            id: fresh_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: true,
            parents,
            back: Some(back),
        }))
    }

    // ---- accessors ----

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data.borrow()[0]
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Overwrite the underlying buffer (optimizer update path).
    pub fn set_data(&self, data: &[T]) {
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), data.len(), "set_data length mismatch");
        d.copy_from_slice(data);
    }

    /// Overwrite one element (finite-difference probes).
    pub fn poke(&self, idx: usize, v: T) {
        self.0.data.borrow_mut()[idx] = v;
    }

    /// Read one element by flat index.
    pub fn peek(&self, idx: usize) -> T {
        self.0.data.borrow()[idx]
    }

    /// In-place elementwise update of the buffer (optimizer update path).
    pub fn update_data(&self, f: impl FnMut(usize, &mut T)) {
        let mut d = self.0.data.borrow_mut();
        let mut f = f;
        for (i, v) in d.iter_mut().enumerate() {
            f(i, v);
        }
    }

    // ---- gradients ----

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accum_grad(&self, contrib: &[T]) {
        if !self.0.requires_grad {
            return;
        }
        let mut g = self.0.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                debug_assert_eq!(buf.len(), contrib.len());
                for (b, c) in buf.iter_mut().zip(contrib.iter()) {
                    *b += *c;
                }
            }
            None => *g = Some(contrib.to_vec()),
        }
    }

    /// Accumulate via a writer over the (zero-initialized on first touch)
    /// gradient buffer. Used by kernels that add in place (gemm with beta=1).
    pub(crate) fn accum_grad_with(&self, write: impl FnOnce(&mut [T])) {
        if !self.0.requires_grad {
            return;
        }
        let mut g = self.0.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![T::ZERO; self.numel()]);
        }
        write(g.as_mut().unwrap());
    }

    /// Cut the graph: same values, no gradient history.
    pub fn detach(&self) -> Tensor<T> {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    /// Convert the element type (degrades through f64); result is a leaf.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data: Vec<U> = self.data().iter().map(|&v| U::from_f64(v.to_f64())).collect();
        Tensor::<U>::leaf(self.0.shape.clone(), data, false)
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// `requires_grad` ancestor; repeated calls without `zero_grad` sum.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.0.shape
            )));
        }
        if !self.0.requires_grad {
            return Ok(());
        }
        self.accum_grad(&[T::ONE]);

        // Post-order DFS: parents land before children, so the reversed list
        // visits each node only after all its consumers have contributed.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((node, pi)) = stack.pop() {
            if pi < node.0.parents.len() {
                let parent = node.0.parents[pi].clone();
                stack.push((node, pi + 1));
                if parent.0.requires_grad && visited.insert(parent.0.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        for node in order.iter().rev() {
            if let Some(back) = &node.0.back {
                // Clone the output gradient so the closure can borrow grads
                // of parents (including self-referential shapes) freely.
                let g_opt = node.0.grad.borrow().clone();
                if let Some(g) = g_opt {
                    back(&g, &node.0.parents);
                }
            }
        }
        // Interior gradients are per-sweep scratch; only leaves (parameters)
        // keep accumulating across calls.
        for node in order.iter() {
            if node.0.back.is_some() {
                node.zero_grad();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_roundtrip() {
        let t = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(!t.requires_grad());
    }

    #[test]
    fn from_vec_length_mismatch() {
        let r = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let t = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(t.backward().is_err());
    }

    #[test]
    fn shared_subexpression_accumulates_and_double_backward_doubles() {
        // y = x + x: dy/dx = 2. Backward twice without reset => 4.
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let y = x.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
        x.zero_grad();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn detach_blocks_gradients() {
        let x = Tensor::<f64>::param(&[1], vec![2.0]).unwrap();
        let y = x.mul(&x).unwrap().detach();
        let z = y.scale(3.0);
        assert!(!z.requires_grad());
        assert_eq!(z.item(), 12.0);
    }
}
