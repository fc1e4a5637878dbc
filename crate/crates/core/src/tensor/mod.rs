//! Dense fp64 tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to a node holding row-major values.
//! Operations on tensors that require gradients record a backward closure and
//! their inputs; [`Tensor::backward`] walks that graph in reverse topological
//! order and accumulates gradients into the leaves.
//!
//! Leaves are the only nodes whose values change after creation (optimizer
//! updates go through [`Tensor::data_mut`]).

mod conv;
mod linalg;
mod norm;
mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conv::conv_out_extent;
pub use norm::{BatchNormMode, BatchNormStats};

/// Ordered tensor extents; every extent is at least one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape("shape", format!("zero extent in {dims:?}")));
        }
        Ok(Shape(dims))
    }

    pub(crate) fn of(dims: impl Into<Vec<usize>>) -> Self {
        let dims = dims.into();
        debug_assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        Shape(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Last extent, or 1 for a rank-0 shape.
    pub fn last(&self) -> usize {
        self.0.last().copied().unwrap_or(1)
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Maps the gradient of an op's output to gradients of each of its inputs.
/// `None` means the input receives no gradient from this op.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Edge {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Shape,
    data: RwLock<Vec<f64>>,
    requires_grad: bool,
    retain: AtomicBool,
    grad: Mutex<Option<Vec<f64>>>,
    edge: Option<Edge>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any differentiation graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let head: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.edge.as_ref().map(|e| e.op))
            .field("values", &head)
            .finish()
    }
}

impl Tensor {
    fn leaf_node(shape: Shape, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                requires_grad,
                retain: AtomicBool::new(false),
                grad: Mutex::new(None),
                edge: None,
            }),
        }
    }

    /// A constant leaf (no gradient).
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Self::leaf_node(shape, data, false))
    }

    /// A trainable leaf.
    pub fn param(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(dims, data)?;
        Ok(Self::leaf_node(t.node.shape.clone(), t.to_vec(), true))
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        let n = shape.numel();
        Ok(Self::leaf_node(shape, vec![value; n], false))
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf_node(Shape::of(vec![1]), vec![value], false)
    }

    /// Same values, marked (or unmarked) as trainable. Always a fresh leaf.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::leaf_node(self.node.shape.clone(), self.to_vec(), requires_grad)
    }

    /// A gradient-free leaf copy of this tensor's values.
    pub fn detach(&self) -> Self {
        self.with_requires_grad(false)
    }

    pub(crate) fn from_op(
        op: &'static str,
        shape: Shape,
        data: Vec<f64>,
        inputs: &[&Tensor],
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(shape.numel(), data.len(), "{op}: shape/data mismatch");
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let edge = track.then(|| Edge {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            backward: Box::new(backward),
        });
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                requires_grad: track,
                retain: AtomicBool::new(false),
                grad: Mutex::new(None),
                edge,
            }),
        }
    }

    /// Whether the op result needs a backward closure at all.
    pub(crate) fn tracks(inputs: &[&Tensor]) -> bool {
        grad_enabled() && inputs.iter().any(|t| t.requires_grad())
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &Shape {
        &self.node.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.node.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.edge.is_none()
    }

    /// Name of the producing op, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.edge.as_ref().map(|e| e.op)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.node.data.read()
    }

    /// Mutable access for in-place parameter updates. Only meaningful on leaves.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f64>> {
        debug_assert!(self.is_leaf(), "in-place write to a non-leaf tensor");
        self.node.data.write()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("tensor {} is not a scalar", self.shape())));
        }
        Ok(self.data()[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock() = None;
    }

    /// Multiplies the stored gradient in place (no-op without one).
    pub fn scale_grad(&self, c: f64) {
        if let Some(g) = self.node.grad.lock().as_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Keep this non-leaf tensor's gradient after the next backward pass.
    pub fn retain_grad(&self) {
        self.node.retain.store(true, Ordering::Relaxed);
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.node.grad.lock();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar, accumulating `∂self/∂leaf` into
    /// every leaf that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS gives a topological order (inputs first).
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(edge) = &t.node.edge {
                for inp in edge.inputs.iter().filter(|i| i.requires_grad()) {
                    if !visited.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.node.edge {
                None => t.accumulate_grad(&g),
                Some(edge) => {
                    if t.node.retain.load(Ordering::Relaxed) {
                        t.accumulate_grad(&g);
                    }
                    let grads = (edge.backward)(&g);
                    debug_assert_eq!(grads.len(), edge.inputs.len(), "{}", edge.op);
                    for (inp, ig) in edge.inputs.iter().zip(grads) {
                        let Some(ig) = ig else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), inp.numel(), "{} grad length", edge.op);
                        match pending.get_mut(&inp.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(inp.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(Shape::new(vec![2, 0]).is_err());
        assert_eq!(Shape::new(vec![2, 3]).unwrap().numel(), 6);
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Shape { .. })));
    }

    #[test]
    fn reuse_accumulates_both_paths() {
        // f = x*x + 3x, df/dx = 2x + 3
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let f = x.mul(&x).unwrap().add(&x.scale(3.0)).unwrap().sum();
        f.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn non_leaf_grad_only_when_retained() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(3.0);
        let z = x.scale(2.0);
        z.retain_grad();
        y.add(&z).unwrap().sum().backward().unwrap();
        assert!(y.grad().is_none());
        assert_eq!(z.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(x.grad().unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.scale(2.0));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
        assert!(grad_enabled());
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        x.scale(2.0).sum().backward().unwrap();
        x.scale(2.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }
}
