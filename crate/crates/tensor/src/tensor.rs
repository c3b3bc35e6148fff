use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::element::Element;
use crate::error::{dim_err, Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule of one recorded operation.
pub(crate) trait GradFn<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn inputs(&self) -> Vec<&Tensor<T>>;

    /// Gradient with respect to each entry of [`GradFn::inputs`], in order.
    /// `None` is allowed for inputs that do not require a gradient.
    fn backward(&self, output: &Tensor<T>, grad_output: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<Box<dyn GradFn<T>>>,
}

/// Dense row-major N-d array, optionally attached to a recorded compute graph.
///
/// Cloning is cheap (reference counted). Data is immutable once created;
/// optimizers produce fresh leaf tensors instead of mutating in place.
pub struct Tensor<T: Element = f32> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self { node: Arc::clone(&self.node) }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &T::NAME)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.op_name())
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(dim_err!("shape {shape:?} must be a non-empty list of positive extents"));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(dim_err!("shape {shape:?} holds {numel} values but {len} were supplied"));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Self {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn: None,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Trainable leaf tensor; gradients accumulate into it on backward.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, true))
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![value; numel])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Output of a recorded operation. The backward rule is dropped when no
    /// input requires a gradient, so constant subgraphs build no graph.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, grad_fn: impl GradFn<T> + 'static) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = grad_fn.inputs().iter().any(|t| t.requires_grad());
        let grad_fn: Option<Box<dyn GradFn<T>>> = if requires_grad { Some(Box::new(grad_fn)) } else { None };
        Self {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if it is part of a graph.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|f| f.name())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.node.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(TensorError::Contract(format!(
                "item() needs a single-element tensor, got shape {:?}",
                self.shape()
            ))),
        }
    }

    /// `(N, C, H, W)` of an image tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(dim_err!("expected an N x C x H x W tensor, got shape {s:?}")),
        }
    }

    /// Accumulated gradient of a leaf, present only after a backward pass
    /// reached it (or after [`Tensor::zero_grad`]).
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = Some(vec![T::zero(); self.numel()]);
    }

    pub fn clear_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, cut from any graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), false)
    }

    /// Fresh leaf with the same values and the requested tracking flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), requires_grad)
    }

    /// Constant copy converted to another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.node.data.iter().map(|v| U::of(v.as_f64())).collect();
        Tensor::leaf(self.node.shape.clone(), data, false)
    }

    /// Reverse-mode differentiation of a scalar.
    ///
    /// Populates the gradient of every leaf that requires one and lies on a
    /// path to `self`. Leaf gradients accumulate across calls until reset.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::Contract(
                "backward called on a tensor that is not attached to a recorded graph".into(),
            ));
        }

        // Post-order: every node appears after all of its inputs.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.node.grad_fn {
                for input in f.inputs() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(grad) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.node.grad_fn {
                Some(f) => {
                    let inputs = f.inputs();
                    let input_grads = f.backward(t, &grad);
                    debug_assert_eq!(inputs.len(), input_grads.len(), "{} backward arity", f.name());
                    for (input, g) in inputs.into_iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), input.numel(), "{} gradient size", f.name());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => add_into(acc, &g),
                            None => {
                                pending.insert(input.id(), g);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => add_into(acc, &grad),
                        None => *slot = Some(grad),
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn add_into<T: Element>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}
