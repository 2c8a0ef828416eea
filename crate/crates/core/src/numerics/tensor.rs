//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every differentiable operation returns a new [`Tensor`] whose node keeps
//! handles to its inputs and a backward closure. [`Tensor::backward`] walks
//! the graph in reverse topological order and accumulates gradients into
//! every leaf created with `requires_grad`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{ensure, Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// What a backward closure gets to see.
pub(crate) struct BackwardCtx<'a> {
    pub inputs: &'a [Tensor],
    pub needs: &'a [bool],
    pub out: &'a [f64],
    pub grad_out: &'a [f64],
}

type BackwardFn = dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync;

struct GradFn {
    name: &'static str,
    inputs: Vec<Tensor>,
    f: Box<BackwardFn>,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Reference-counted handle to a node in the computation graph.
///
/// Cloning is cheap and yields another handle to the same storage.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        ensure!(
            shape.iter().all(|&d| d > 0),
            Error::shape("tensor", format!("extents must be positive, got {shape:?}"))
        );
        ensure!(
            numel(shape) == data.len(),
            Error::shape(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len())
            )
        );
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::make(t.shape().to_vec(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::make(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::make(vec![1], vec![value], false, None)
    }

    /// Result of a recorded operation. The node only keeps its inputs when
    /// at least one of them participates in differentiation.
    pub(crate) fn from_op<F>(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        f: F,
    ) -> Self
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len(), "{name}");
        let grad_fn = if inputs.iter().any(Tensor::is_tracked) {
            Some(GradFn {
                name,
                inputs,
                f: Box::new(f),
            })
        } else {
            None
        };
        Self::make(shape, data, false, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True when gradients flow through this tensor.
    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad || self.0.grad_fn.is_some()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read()
    }

    /// Mutable access to the values. Only meant for leaves (optimizer steps,
    /// checkpoint loading, test perturbations); mutating an interior node
    /// invalidates the graph built on top of it.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f64>> {
        self.0.data.write()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    pub fn item(&self) -> f64 {
        self.data()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().clone()
    }

    #[cfg(test)]
    pub(crate) fn set_grad(&self, g: Vec<f64>) {
        *self.0.grad.lock() = Some(g);
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    /// Copy of the values as an untracked leaf.
    pub fn detach(&self) -> Tensor {
        Self::make(self.shape().to_vec(), self.to_vec(), false, None)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        ensure!(
            numel(shape) == self.numel(),
            Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape()))
        );
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad_out.to_vec())],
        ))
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar. Gradients are added to whatever
    /// the leaves already hold; call [`Tensor::zero_grad`] to reset.
    pub fn backward(&self) -> Result<()> {
        ensure!(
            self.numel() == 1,
            Error::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape()))
        );
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        if self.0.grad_fn.is_none() {
            if self.requires_grad() {
                accumulate_leaf(self, vec![1.0]);
            }
            return Ok(());
        }
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let gf = node.0.grad_fn.as_ref().expect("topo order holds interior nodes only");
            let needs: Vec<bool> = gf.inputs.iter().map(Tensor::is_tracked).collect();
            let out = node.data();
            let ctx = BackwardCtx {
                inputs: &gf.inputs,
                needs: &needs,
                out: &out,
                grad_out: &g,
            };
            let input_grads = (gf.f)(&ctx);
            drop(out);
            debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.name);
            for ((input, need), ig) in gf.inputs.iter().zip(&needs).zip(input_grads) {
                let (true, Some(ig)) = (*need, ig) else {
                    continue;
                };
                debug_assert_eq!(ig.len(), input.numel(), "{}", gf.name);
                if let Some(bad) = ig.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient from `{}` (node {}) into input node {} at flat index {bad}",
                        gf.name,
                        node.id(),
                        input.id()
                    )));
                }
                if input.0.grad_fn.is_some() {
                    match grads.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => {
                            grads.insert(input.id(), ig);
                        }
                    }
                } else if input.requires_grad() {
                    accumulate_leaf(input, ig);
                }
            }
        }
        Ok(())
    }

    /// Interior nodes reachable from `self`, inputs before outputs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if t.0.grad_fn.is_none() || !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in &t.0.grad_fn.as_ref().unwrap().inputs {
                if input.0.grad_fn.is_some() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }
}

fn accumulate_leaf(leaf: &Tensor, g: Vec<f64>) {
    let mut slot = leaf.0.grad.lock();
    match slot.as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("id", &self.id())
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
