//! Reverse-mode autodiff on dense 2D matrices.
//!
//! The engine is deliberately small: every value in a computation graph is a
//! row-major [`ndarray::Array2`], and the op set is exactly what the models in
//! this crate need (matmul, elementwise maps, row/column broadcasts, softmax,
//! layer norm, exclusive cumulative sums, segment reductions, gathers, and
//! bilinear triplane sampling). Higher-rank data is encoded in two dimensions:
//! an image is `[H·W, C]` with row-major pixel order, a triplane is
//! `[planes·P·P, C]`, a batch of rays is `[rays·samples, C]`. 2D keeps each
//! backward rule a few lines of auditable code and makes convolution a
//! gather-plus-matmul.
//!
//! Scalars are `[1, 1]` tensors; vectors are `[1, M]` rows or `[N, 1]`
//! columns. Broadcasting is restricted to scalars and to the explicitly named
//! row/column ops ([`Tensor::add_row`], [`Tensor::add_col`], ...), never
//! inferred from shapes.
//!
//! # Graphs and gradients
//!
//! A [`Tensor`] is a shared handle to a graph node. Nodes created from raw
//! data are either constants ([`Tensor::constant`]) or leaves
//! ([`Tensor::leaf`], `requires_grad = true`); every op output tracks its
//! parents and a backward closure unless no parent requires gradients, in
//! which case the graph is pruned at that point. Graphs live for one forward
//! pass: [`Tensor::backward`] walks the graph once, then the handles are
//! dropped and the optimizer mutates leaf data in place before the next pass.
//!
//! Calling `backward` twice on the same graph adds the same gradients again —
//! gradient storage is strictly accumulate-only until [`Tensor::zero_grad`].
//!
//! ```
//! use triforge::tensor::Tensor;
//!
//! let x = Tensor::<f64>::leaf_from(2, 2, &[1.0, -2.0, 3.0, -4.0]);
//! let loss = x.mul(&x).unwrap().sum_all();
//! loss.backward().unwrap();
//! // d(sum x²)/dx = 2x
//! assert_eq!(x.grad().unwrap()[[0, 1]], -4.0);
//! ```
//!
//! # Precision
//!
//! Everything is generic over [`Real`] (`f32` or `f64`). Training runs in
//! `f32`; gradient checking ([`gradcheck`]) reruns the same graph code in
//! `f64` where central finite differences are trustworthy.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::rc::Rc;

use ndarray::{Array2, LinalgScalar, ScalarOperand};

use crate::error::{Error, Result};

pub mod checkpoint;
mod gradcheck;
mod ops;

pub use gradcheck::{gradcheck, gradcheck_excluding, numeric_gradient};

/// Floating-point scalar the engine is generic over.
///
/// Implemented for `f32` (training) and `f64` (gradient checking). The
/// methods mirror the small slice of `std` float API the op set needs.
pub trait Real:
    LinalgScalar
    + ScalarOperand
    + PartialOrd
    + Debug
    + Display
    + serde::Serialize
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    /// Short dtype tag used in error messages and format headers.
    const NAME: &'static str;

    /// Lossy conversion from `f64` (exact for `f64`, rounded for `f32`).
    fn from_f64(v: f64) -> Self;
    /// Widening conversion to `f64`.
    fn to_f64(self) -> f64;
    /// Conversion from `f32` (always exact).
    fn from_f32(v: f32) -> Self;
    /// Narrowing conversion to `f32`.
    fn to_f32(self) -> f32;

    /// `e^self`.
    fn exp(self) -> Self;
    /// Natural log.
    fn ln(self) -> Self;
    /// Square root.
    fn sqrt(self) -> Self;
    /// Absolute value.
    fn abs(self) -> Self;
    /// IEEE max (used for clamps; inputs are never NaN in valid graphs).
    fn maximum(self, other: Self) -> Self;
    /// IEEE min.
    fn minimum(self, other: Self) -> Self;
    /// True when neither NaN nor infinite.
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty, $name:expr) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline]
            fn to_f32(self) -> f32 {
                self as f32
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn maximum(self, other: Self) -> Self {
                self.max(other)
            }
            #[inline]
            fn minimum(self, other: Self) -> Self {
                self.min(other)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_real!(f32, "f32");
impl_real!(f64, "f64");

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static STRICT: Cell<bool> = const { Cell::new(false) };
    static NONFINITE: Cell<Option<&'static str>> = const { Cell::new(None) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Enable or disable strict finiteness checking on this thread.
///
/// While enabled, every op output is scanned and the first op that produces a
/// NaN or infinity is recorded (see [`take_nonfinite`]). Gradient checking
/// turns this on; training leaves it off and checks only the loss scalar.
pub fn set_strict(on: bool) {
    STRICT.with(|c| c.set(on));
    if on {
        NONFINITE.with(|c| c.set(None));
    }
}

/// Take (and clear) the name of the first op that produced a non-finite
/// value since strict checking was enabled.
pub fn take_nonfinite() -> Option<&'static str> {
    NONFINITE.with(|c| c.take())
}

fn record_if_nonfinite<T: Real>(name: &'static str, data: &Array2<T>) {
    if STRICT.with(|c| c.get()) && NONFINITE.with(|c| c.get().is_none()) {
        if !data.iter().all(|v| v.is_finite()) {
            NONFINITE.with(|c| c.set(Some(name)));
        }
    }
}

/// Backward closure: maps the gradient flowing into a node to per-parent
/// gradient contributions (`None` for parents that do not require gradients).
///
/// Parents are passed in rather than captured so that the op record is the
/// *sole* owner of its parent handles — that single-ownership invariant is
/// what lets [`Node`]'s `Drop` disassemble arbitrarily deep graphs without
/// recursing.
type BackwardFn<T> = Box<dyn Fn(&Array2<T>, &[Tensor<T>]) -> Vec<Option<Array2<T>>>>;

struct OpRecord<T: Real> {
    name: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Real> {
    id: u64,
    data: RefCell<Array2<T>>,
    grad: RefCell<Option<Array2<T>>>,
    requires_grad: bool,
    op: RefCell<Option<OpRecord<T>>>,
}

impl<T: Real> Drop for Node<T> {
    fn drop(&mut self) {
        // Disassemble the parent chain iteratively: a naive recursive drop
        // overflows the stack on long op chains (each node owns its parents
        // through the op record).
        let mut stack: Vec<OpRecord<T>> = self.op.get_mut().take().into_iter().collect();
        while let Some(op) = stack.pop() {
            for parent in op.parents {
                let mut rc = parent.inner;
                // Sole owner → detach its op before the Rc drops so the
                // chain unwinds on this loop's stack, not the call stack.
                if let Some(node) = Rc::get_mut(&mut rc) {
                    if let Some(parent_op) = node.op.get_mut().take() {
                        stack.push(parent_op);
                    }
                }
            }
        }
    }
}

/// Shared handle to a node in the computation graph.
///
/// Cloning is cheap (reference count bump) and clones alias the same node:
/// gradients accumulated through one handle are visible through all.
pub struct Tensor<T: Real> {
    inner: Rc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(
            f,
            "Tensor<{}>[{r}x{c}]{}",
            T::NAME,
            if self.inner.requires_grad { " grad" } else { "" }
        )
    }
}

impl<T: Real> Tensor<T> {
    fn new(data: Array2<T>, requires_grad: bool, op: Option<OpRecord<T>>) -> Self {
        Tensor {
            inner: Rc::new(Node {
                id: next_id(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op: RefCell::new(op),
            }),
        }
    }

    /// A constant: participates in forward math, never receives gradients.
    pub fn constant(data: Array2<T>) -> Self {
        Tensor::new(data, false, None)
    }

    /// A gradient leaf (parameter or gradcheck input).
    pub fn leaf(data: Array2<T>) -> Self {
        Tensor::new(data, true, None)
    }

    /// Convenience: constant from a row-major slice.
    ///
    /// Panics if `values.len() != rows * cols` (test/setup helper).
    pub fn from(rows: usize, cols: usize, values: &[T]) -> Self {
        Tensor::constant(
            Array2::from_shape_vec((rows, cols), values.to_vec())
                .expect("value count must equal rows*cols"),
        )
    }

    /// Convenience: leaf from a row-major slice.
    pub fn leaf_from(rows: usize, cols: usize, values: &[T]) -> Self {
        Tensor::leaf(
            Array2::from_shape_vec((rows, cols), values.to_vec())
                .expect("value count must equal rows*cols"),
        )
    }

    /// Constant scalar as a `[1, 1]` tensor.
    pub fn scalar(v: T) -> Self {
        Tensor::constant(Array2::from_elem((1, 1), v))
    }

    /// Constant of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::constant(Array2::zeros((rows, cols)))
    }

    /// Result of an op. Gradient tracking is pruned when no parent needs it.
    pub(crate) fn from_op(
        data: Array2<T>,
        name: &'static str,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        record_if_nonfinite(name, &data);
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        let op = requires_grad.then(|| OpRecord {
            name,
            parents,
            backward,
        });
        Tensor::new(data, requires_grad, op)
    }

    /// Node identity (unique per process, stable for a node's lifetime).
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    /// `(rows, cols)`.
    pub fn shape(&self) -> (usize, usize) {
        let d = self.inner.data.borrow();
        (d.nrows(), d.ncols())
    }

    /// Total element count.
    pub fn numel(&self) -> usize {
        let (r, c) = self.shape();
        r * c
    }

    /// Whether this node receives gradients.
    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the forward value.
    pub fn data(&self) -> Ref<'_, Array2<T>> {
        self.inner.data.borrow()
    }

    /// Clone the forward value out of the graph.
    pub fn value(&self) -> Array2<T> {
        self.inner.data.borrow().clone()
    }

    /// The single element of a `[1, 1]` tensor.
    ///
    /// Panics if the tensor is not scalar-shaped.
    pub fn item(&self) -> T {
        let d = self.inner.data.borrow();
        assert_eq!(d.dim(), (1, 1), "item() requires a [1,1] tensor");
        d[[0, 0]]
    }

    /// Clone the accumulated gradient, if any backward pass has reached this
    /// node since the last [`Tensor::zero_grad`].
    pub fn grad(&self) -> Option<Array2<T>> {
        self.inner.grad.borrow().clone()
    }

    /// Clear the accumulated gradient.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrite a leaf's value in place (optimizer step, checkpoint load).
    ///
    /// Panics on shape change: leaves keep their shape for life.
    pub fn set_value(&self, data: Array2<T>) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.dim(), data.dim(), "set_value must preserve shape");
        *d = data;
    }

    /// Mutate the value in place (used by the optimizer update rule).
    pub fn update_value(&self, f: impl FnOnce(&mut Array2<T>)) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// A constant sharing this tensor's current value (cuts the graph).
    pub fn detach(&self) -> Tensor<T> {
        Tensor::constant(self.value())
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients flow through a fresh per-call map and are then *added* to
    /// each reachable `requires_grad` node's stored gradient, so calling
    /// `backward` twice doubles every gradient exactly.
    pub fn backward(&self) -> Result<()> {
        let (r, c) = self.shape();
        if (r, c) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: vec![r, c],
                rhs: vec![1, 1],
            });
        }

        let order = self.topo_order();
        let mut flow: HashMap<u64, Array2<T>> = HashMap::new();
        flow.insert(self.id(), Array2::from_elem((1, 1), T::one()));

        for node in order.iter().rev() {
            let Some(g) = flow.get(&node.id()) else {
                continue;
            };
            let op_slot = node.inner.op.borrow();
            if let Some(op) = op_slot.as_ref() {
                let parent_grads = (op.backward)(g, &op.parents);
                debug_assert_eq!(parent_grads.len(), op.parents.len(), "{}", op.name);
                for (parent, pg) in op.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    debug_assert_eq!(
                        pg.dim(),
                        parent.data().dim(),
                        "backward of {} produced a wrong-shaped parent grad",
                        op.name
                    );
                    match flow.get_mut(&parent.id()) {
                        Some(acc) => *acc += &pg,
                        None => {
                            flow.insert(parent.id(), pg);
                        }
                    }
                }
            }
        }

        for node in &order {
            if !node.inner.requires_grad {
                continue;
            }
            if let Some(g) = flow.remove(&node.id()) {
                let mut slot = node.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => *acc += &g,
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Post-order (parents before children) over the reachable graph.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        // Iterative DFS; (node, next-parent index) frames avoid stack overflow
        // on long chains.
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id(), ());
        while let Some((node, pi)) = stack.pop() {
            let parent = node
                .inner
                .op
                .borrow()
                .as_ref()
                .and_then(|op| op.parents.get(pi).cloned());
            match parent {
                Some(p) => {
                    stack.push((node, pi + 1));
                    if visited.insert(p.id(), ()).is_none() {
                        stack.push((p, 0));
                    }
                }
                None => order.push(node),
            }
        }
        order
    }
}

/// Role of a parameter, deciding weight-decay eligibility: only
/// [`ParamKind::Weight`] decays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Multiplicative weight matrix (includes embeddings and learned queries).
    Weight,
    /// Additive bias vector.
    Bias,
    /// Normalization scale (gamma).
    NormScale,
    /// Normalization shift (beta).
    NormShift,
}

/// A named learnable tensor.
#[derive(Clone)]
pub struct Param<T: Real> {
    /// Unique dotted path, e.g. `"encoder.0.attn.wq"`.
    pub name: String,
    /// Decay class.
    pub kind: ParamKind,
    /// The tensor itself (`requires_grad` is always true).
    pub tensor: Tensor<T>,
}

/// Ordered, uniquely named collection of parameters for one model.
///
/// Models register every learnable tensor here at construction; the optimizer
/// and the checkpoint reader/writer both enumerate models exclusively through
/// their `ParamSet`.
#[derive(Default)]
pub struct ParamSet<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    /// Empty set.
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    /// Register a leaf under a unique name and hand back the shared handle.
    ///
    /// Panics on duplicate names: parameter paths are compile-time constants
    /// in this crate, so a collision is a bug, not an input error.
    pub fn register(&mut self, name: &str, kind: ParamKind, data: Array2<T>) -> Tensor<T> {
        assert!(
            self.get(name).is_none(),
            "duplicate parameter name {name:?}"
        );
        let tensor = Tensor::leaf(data);
        self.params.push(Param {
            name: name.to_string(),
            kind,
            tensor: tensor.clone(),
        });
        tensor
    }

    /// Look a parameter up by name.
    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Iterate in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Number of parameters (tensors, not elements).
    pub fn len(&self) -> usize {
        self.params.len()
    }

    /// True when no parameters are registered.
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total element count across all parameters.
    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Clear all gradients (start of a training step).
    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_does_not_track_gradients() {
        let c = Tensor::<f64>::from(1, 2, &[1.0, 2.0]);
        let s = c.sum_all();
        assert!(!s.requires_grad());
        assert!(s.backward().is_ok());
        assert!(c.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::leaf_from(2, 1, &[1.0, 2.0]);
        let y = x.mul_scalar(2.0);
        let err = y.backward().unwrap_err();
        assert!(matches!(err, Error::Shape { op: "backward", .. }));
    }

    #[test]
    fn sum_backward_is_ones() {
        let x = Tensor::<f64>::leaf_from(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), Array2::from_elem((2, 3), 1.0));
    }

    #[test]
    fn square_sum_backward_is_two_x() {
        let x = Tensor::<f64>::leaf(array![[1.0, -2.0], [0.5, 3.0]]);
        x.mul(&x).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), array![[2.0, -4.0], [1.0, 6.0]]);
    }

    #[test]
    fn backward_twice_doubles_every_grad() {
        let x = Tensor::<f64>::leaf(array![[1.5, -0.25], [2.0, 4.0]]);
        let w = Tensor::<f64>::leaf(array![[0.5], [1.5]]);
        let loss = x.matmul(&w).unwrap().mul_scalar(3.0).sum_all();
        loss.backward().unwrap();
        let gx1 = x.grad().unwrap();
        let gw1 = w.grad().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), &gx1 * 2.0);
        assert_eq!(w.grad().unwrap(), &gw1 * 2.0);
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // y = x  used twice: loss = sum(x*x + x*x) = 2*sum(x^2)
        let x = Tensor::<f64>::leaf(array![[3.0]]);
        let a = x.mul(&x).unwrap();
        let b = x.mul(&x).unwrap();
        a.add(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap()[[0, 0]], 12.0); // 4x at x=3
    }

    #[test]
    fn shared_subexpression_counted_once_per_use() {
        // loss = sum((2x) + (2x)) → d/dx = 4
        let x = Tensor::<f64>::leaf(array![[1.0, 1.0]]);
        let d = x.mul_scalar(2.0);
        d.add(&d).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), array![[4.0, 4.0]]);
        // The intermediate also reports its accumulated gradient.
        assert_eq!(d.grad().unwrap(), array![[2.0, 2.0]]);
    }

    #[test]
    fn strict_mode_records_offending_op() {
        set_strict(true);
        let x = Tensor::<f64>::leaf(array![[-1.0]]);
        let _ = x.ln(); // ln of a negative value → NaN
        assert_eq!(take_nonfinite(), Some("ln"));
        set_strict(false);
    }

    #[test]
    fn param_set_registers_and_counts() {
        let mut ps = ParamSet::<f32>::new();
        let w = ps.register("layer.w", ParamKind::Weight, Array2::zeros((3, 4)));
        ps.register("layer.b", ParamKind::Bias, Array2::zeros((1, 4)));
        assert_eq!(ps.total_elements(), 16);
        assert_eq!(ps.get("layer.w").unwrap().kind, ParamKind::Weight);
        let loss = w.sum_all();
        loss.backward().unwrap();
        assert!(w.grad().is_some());
        ps.zero_grads();
        assert!(w.grad().is_none());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn param_set_rejects_duplicates() {
        let mut ps = ParamSet::<f32>::new();
        ps.register("w", ParamKind::Weight, Array2::zeros((1, 1)));
        ps.register("w", ParamKind::Weight, Array2::zeros((1, 1)));
    }

    #[test]
    fn deep_chain_backward_does_not_overflow_stack() {
        let x = Tensor::<f64>::leaf(array![[1.0]]);
        let mut y = x.clone();
        for _ in 0..20_000 {
            y = y.mul_scalar(1.0);
        }
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap()[[0, 0]], 1.0);
    }
}
