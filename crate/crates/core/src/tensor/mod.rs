//! Dense row-major tensors with reverse-mode differentiation.
//!
//! Every operation on tensors that require gradients records a node holding
//! its inputs and a backward rule. Node ids increase monotonically with
//! creation, so sorting reachable nodes by descending id yields a reverse
//! topological order for [`Tensor::backward`].

mod gradcheck;
mod ops;
mod scalar;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck, GradcheckReport};
pub use ops::{BinaryOp, UnaryOp};
pub use scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule: maps the output gradient (and output values) to one
/// optional gradient per recorded input.
pub type BackwardFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Op<T: Scalar> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    op: Option<Op<T>>,
}

/// N-dimensional array participating in a differentiation graph.
///
/// Cloning is cheap (shared handle). Values are immutable once created.
pub struct Tensor<T: Scalar = f64> {
    node: Arc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.node.shape);
        if self.node.data.len() <= 16 {
            s.field("data", &self.node.data);
        }
        s.field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.op.as_ref().map(|o| o.name))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn from_node(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    /// Constant (non-differentiable) tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {} elements but {} were given",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.detach_with_grad(true))
    }

    pub fn scalar(v: T) -> Self {
        Self::from_node(Vec::new(), vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_node(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_node(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    /// Builds a constant from `f64` values, converting to `T`.
    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| T::from_f64_lossy(v)).collect(), shape)
    }

    /// Records a custom operation.
    ///
    /// `backward` receives the output gradient and output values and returns
    /// one gradient per input (`None` for inputs it does not differentiate).
    /// When no input requires a gradient the op is not recorded.
    pub fn from_op(
        name: &'static str,
        data: Vec<T>,
        shape: &[usize],
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "{name}: output shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(|| Op {
            name,
            inputs,
            backward,
        });
        Ok(Self::from_node(shape.to_vec(), data, requires_grad, op))
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor with shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    /// Copy of the values, cut from the graph.
    pub fn detach(&self) -> Self {
        self.detach_with_grad(false)
    }

    fn detach_with_grad(&self, requires_grad: bool) -> Self {
        Self::from_node(
            self.node.shape.clone(),
            self.node.data.clone(),
            requires_grad,
            None,
        )
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.op.as_ref().map(|o| o.name)
    }

    /// Reverse-mode pass from a scalar loss.
    ///
    /// Leaves that require gradients accumulate `d(loss)/d(leaf)`; calling
    /// twice without [`Tensor::zero_grad`] sums both contributions.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.node.id) {
                continue;
            }
            if let Some(op) = &t.node.op {
                stack.extend(op.inputs.iter().cloned());
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.node.id.cmp(&a.node.id));

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.node.id, vec![T::one()]);
        for t in order {
            let Some(g) = pending.remove(&t.node.id) else {
                continue;
            };
            match &t.node.op {
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                        None => *slot = Some(g),
                    }
                }
                Some(op) => {
                    let grads = (op.backward)(&g, &t.node.data);
                    debug_assert_eq!(grads.len(), op.inputs.len(), "{}", op.name);
                    for (input, gi) in op.inputs.iter().zip(grads) {
                        let Some(gi) = gi else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(gi.len(), input.numel(), "{}", op.name);
                        match pending.get_mut(&input.node.id) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a = *a + b),
                            None => {
                                pending.insert(input.node.id, gi);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
