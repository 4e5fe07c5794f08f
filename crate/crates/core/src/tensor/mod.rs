//! Dense double-precision tensors with a define-by-run reverse-mode tape.
//!
//! Parameters live outside the tape as plain [`Tensor`]s. Each forward pass
//! creates a fresh [`Tape`], binds the tensors it needs as leaves, and records
//! every primitive as it executes. [`Tape::backward`] then walks the record in
//! reverse, so inputs always precede the operations that consume them.
//!
//! ```
//! use scopenet::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).data(), &[6.0]);
//! ```

pub mod gradcheck;
mod ops;
pub mod params;

pub use params::{Bound, NamedTensor, ParamSet};

use std::cell::RefCell;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Guard added to norms in cosine similarity and used for probability clamps.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: entry {index} = {value} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for {op} over {len} entries")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("mask selects no rows (empty scope)")]
    EmptyScope,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major array of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Length {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Views the tensor as a matrix: scalars are 1×1 and vectors a single row.
    pub fn dims2(&self) -> (usize, usize) {
        matrix_dims(&self.shape)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[row * cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, cols) = self.dims2();
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [m, n] => (*m, *n),
        _ => {
            let n = *shape.last().unwrap();
            (shape.iter().product::<usize>() / n.max(1), n)
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Relu(usize),
    ClampMin(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LogSumExpRows(usize),
    LogAddExp(usize, usize),
    Sum(usize),
    AddRow(usize, usize),
    Concat(Vec<usize>),
    Gather(usize, Vec<usize>),
    Reshape(usize),
    CosineMatrix(usize, usize),
    WeightedRowSum(usize, Vec<f64>),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
}

/// Ordered record of the primitives executed during one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Vec<f64>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest distance of any recorded `relu` or `clamp_min` input from
    /// its kink; infinite when there is none.
    pub fn kink_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some((x, 0.0)),
                Op::ClampMin(x, floor) => Some((x, floor)),
                _ => None,
            })
            .flat_map(|(x, floor)| nodes[x].value.data.iter().map(move |v| (v - floor).abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Records an input value. Gradients are reported for every leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn value(&self, var: Var<'_>) -> Tensor {
        self.nodes.borrow()[var.id].value.clone()
    }

    /// Gradient of the last backward pass with respect to `var`; zeros when
    /// `var` did not influence the loss or no backward pass ran yet.
    pub fn grad(&self, var: Var<'_>) -> Tensor {
        let nodes = self.nodes.borrow();
        let shape = nodes[var.id].value.shape.clone();
        let grads = self.grads.borrow();
        match grads.get(var.id) {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }

    /// Propagates d(loss)/d(node) to every node recorded before `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id].value;
        if root.numel() != 1 {
            return Err(TensorError::NotScalar(root.shape.clone()));
        }
        let mut grads: Vec<Vec<f64>> = nodes.iter().map(|n| vec![0.0; n.value.numel()]).collect();
        grads[loss.id][0] = 1.0;
        for id in (0..=loss.id).rev() {
            if matches!(nodes[id].op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            if g.iter().any(|v| *v != 0.0) {
                ops::backprop(&nodes, id, &g, &mut grads);
            }
            grads[id] = g;
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    /// Value of a single-entry tensor.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data[0]
    }

    pub fn grad(&self) -> Tensor {
        self.tape.grad(*self)
    }

    pub(crate) fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }
}
