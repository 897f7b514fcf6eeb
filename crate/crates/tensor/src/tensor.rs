use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::autograd::is_grad_enabled;
use crate::{Element, Result, Shape, TensorError};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Maps `(grad_out, out_values)` to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct GradFn<T: Element> {
    pub op: &'static str,
    pub parents: Vec<Tensor<T>>,
    pub backward: BackwardFn<T>,
}

pub(crate) struct Node<T: Element> {
    pub id: usize,
    pub shape: Shape,
    pub data: RefCell<Vec<T>>,
    pub grad: RefCell<Option<Vec<T>>>,
    pub requires_grad: Cell<bool>,
    pub grad_fn: Option<GradFn<T>>,
}

/// Reference-counted handle to a value in the autodiff graph.
///
/// Cloning is cheap and shares the underlying storage, so a parameter held
/// by a layer and the same parameter captured by a recorded op are one node.
pub struct Tensor<T: Element = f32>(pub(crate) Rc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    fn leaf(shape: Shape, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            grad_fn: None,
        }))
    }

    /// Builds a tensor from raw values; fails when `data.len()` does not
    /// match the shape.
    pub fn from_vec(data: Vec<T>, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::invalid(
                "from_vec",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Self::leaf(shape, data, false))
    }

    pub fn from_f64(data: &[f64], shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::from_f64_lossy(v)).collect(), shape)
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Self::leaf(shape, vec![T::zero(); shape.numel()], false)
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Self::leaf(shape, vec![value; shape.numel()], false)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Shape>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(rng.gen_range(lo..hi)))
            .collect();
        Self::leaf(shape, data, false)
    }

    /// Approximately standard-normal samples (Box–Muller).
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape>, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                T::from_f64_lossy((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos())
            })
            .collect();
        Self::leaf(shape, data, false)
    }

    /// Marks a leaf as trainable. Returns `self` for chaining.
    pub fn requires_grad_(self, flag: bool) -> Self {
        self.0.requires_grad.set(flag);
        self
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.0.requires_grad.set(flag);
    }

    pub(crate) fn from_op<F>(
        shape: Shape,
        data: Vec<T>,
        op: &'static str,
        parents: Vec<Tensor<T>>,
        backward: F,
    ) -> Self
    where
        F: Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + 'static,
    {
        debug_assert_eq!(data.len(), shape.numel(), "{op}: output length");
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Self::leaf(shape, data, false);
        }
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(true),
            grad_fn: Some(GradFn { op, parents, backward: Box::new(backward) }),
        }))
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0.shape.0
    }

    pub fn numel(&self) -> usize {
        self.0.shape.numel()
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the op that produced this tensor, if it is not a leaf.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    pub fn values(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable access to the stored values, for optimizers and checkpoint
    /// loading. Shape cannot change.
    pub fn values_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {}", self.0.shape);
        d[0]
    }

    pub fn at(&self, idx: [usize; 4]) -> T {
        let s = self.0.shape.strides();
        self.0.data.borrow()[idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2] + idx[3] * s[3]]
    }

    pub fn set_values(&self, values: &[T]) -> Result<()> {
        let mut d = self.0.data.borrow_mut();
        if d.len() != values.len() {
            return Err(TensorError::invalid(
                "set_values",
                format!("{} values for shape {}", values.len(), self.0.shape),
            ));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub fn fill(&self, value: T) {
        self.0.data.borrow_mut().iter_mut().for_each(|v| *v = value);
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// A new leaf holding a copy of the values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape, self.to_vec(), false)
    }

    /// Same values converted to another element type, as a detached leaf.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .values()
            .iter()
            .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
            .collect();
        Tensor::leaf(self.0.shape, data, false)
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::mismatch(op, self.shape(), other.shape()));
        }
        Ok(())
    }
}
