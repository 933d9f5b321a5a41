//! Minimal dense-array engine with reverse-mode automatic differentiation.
//!
//! Design: a dynamic Wengert tape records primitive operations during the
//! forward pass and replays their adjoints in reverse to populate gradients.
//! Everything is float64. Shapes are row-major. There is no implicit
//! broadcasting: elementwise ops demand exact shape equality, and the only
//! sanctioned expansions are the explicit opt-in primitives `add_bias`
//! (matrix + row vector), `scale_rows` (matrix * column scalar) and
//! `broadcast_rows` (row vector repeated). Anything else is rejected with
//! the offending primitive and shapes named.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod tape;

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArrayError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0} has no gradient populated")]
    MissingGrad(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("index {index} out of bounds for axis of extent {extent} in {op}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },
}

/// Dense multi-dimensional f64 array participating in differentiation.
///
/// `grad` is the accumulator populated by absorbing a backward pass; it is
/// `None` until `zero_grad`/`absorb` touch it and always matches `values`
/// in length afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl DiffArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Self {
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "values length must equal product of shape extents"
        );
        DiffArray {
            shape,
            values,
            requires_grad,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let n = shape.iter().product();
        DiffArray::new(shape, vec![0.0; n], requires_grad)
    }

    pub fn scalar(v: f64, requires_grad: bool) -> Self {
        DiffArray::new(vec![1], vec![v], requires_grad)
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.values.len()]);
    }
}

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter collection. Registration order is the canonical order
/// used by the optimizer and the checkpoint format, so runs are
/// reproducible bit for bit given the same seed and config.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<DiffArray>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, array: DiffArray) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.arrays.len());
        self.names.push(name.to_string());
        self.arrays.push(array);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &DiffArray {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DiffArray {
        &mut self.arrays[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&DiffArray, ArrayError> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| ArrayError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DiffArray)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.arrays.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.arrays.len()).map(ParamId)
    }

    /// Reset gradient accumulators of all trainable parameters to zero.
    pub fn zero_grads(&mut self) {
        for a in &mut self.arrays {
            if a.requires_grad {
                a.zero_grad();
            } else {
                a.grad = None;
            }
        }
    }

    /// Add a backward pass result into the gradient accumulators.
    pub fn absorb(&mut self, grads: tape::GradSet) {
        for (id, g) in grads.into_entries() {
            let arr = &mut self.arrays[id.0];
            debug_assert!(arr.requires_grad);
            let acc = arr
                .grad
                .get_or_insert_with(|| vec![0.0; arr.values.len()]);
            for (a, b) in acc.iter_mut().zip(g.iter()) {
                *a += b;
            }
        }
    }

    /// Mark every parameter whose name starts with `prefix` as frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (n, a) in self.names.iter().zip(self.arrays.iter_mut()) {
            if n.starts_with(prefix) {
                a.requires_grad = false;
            }
        }
    }

    pub fn unfreeze_prefix(&mut self, prefix: &str) {
        for (n, a) in self.names.iter().zip(self.arrays.iter_mut()) {
            if n.starts_with(prefix) {
                a.requires_grad = true;
            }
        }
    }

    pub fn count_params(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, a)| a.numel())
            .sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.arrays
            .iter()
            .filter(|a| a.requires_grad)
            .map(|a| a.numel())
            .sum()
    }
}
