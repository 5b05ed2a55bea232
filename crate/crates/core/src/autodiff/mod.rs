//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a linear tape of primitive applications. Ops are recorded
//! in topological order and evaluated eagerly, so shape errors surface at
//! the call site. [`Graph::backward`] walks the tape once in reverse,
//! accumulating adjoints; [`Graph::set_leaf`] plus [`Graph::replay`]
//! re-evaluate the same record under new leaf values, which is what the
//! finite-difference checker in [`gradcheck`] relies on.
//!
//! Subgradient conventions, fixed so gradient checks stay meaningful:
//! * ReLU (and the hinge alias) uses derivative 0 at exactly 0.
//! * Max-pool ties break toward the first (row-major lowest) index.
//! * The Euclidean norm of a zero difference propagates a zero gradient.

mod kernels;

pub mod gradcheck;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) use kernels::Op;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub value: Tensor,
}

/// Deliberate gradient corruptions, used by the gradcheck command to prove
/// the checker catches a wrong backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds a constant offset to every ReLU input gradient.
    ReluBackwardOffset,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Installs a gradient fault for checker self-tests.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var {
        self.nodes.push(Node { op, inputs, value });
        Var(self.nodes.len() - 1)
    }

    /// Declares a trainable/input placeholder holding `value`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, vec![], value)
    }

    /// Declares a fixed tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, vec![], value)
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Replaces a leaf's value. The new tensor must keep the declared shape.
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::InvalidArgument(format!(
                "node {} is not a leaf",
                v.0
            )));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_leaf",
                lhs: node.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every derived node from the current leaf and constant
    /// values, in recording order.
    pub fn replay(&mut self) -> Result<()> {
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Leaf | Op::Constant) {
                continue;
            }
            let value = {
                let node = &self.nodes[id];
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                kernels::eval(&node.op, &inputs)?
            };
            self.nodes[id].value = value;
        }
        Ok(())
    }

    /// Evaluates the record under the supplied leaf values and returns the
    /// value at `root`.
    pub fn forward(&mut self, leaf_values: &[(Var, Tensor)], root: Var) -> Result<Tensor> {
        for (v, t) in leaf_values {
            self.set_leaf(*v, t.clone())?;
        }
        self.replay()?;
        Ok(self.value(root).clone())
    }

    /// Reverse pass from a scalar `root`. Visits every node at most once in
    /// reverse recording order; every leaf ends up with a gradient tensor
    /// (zeros when the leaf does not influence the root).
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: root_val.shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(adjoint) = adjoints[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.inputs.is_empty() && adjoint.data().iter().any(|&g| g != 0.0) {
                let input_vals: Vec<&Tensor> =
                    node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                let contributions =
                    kernels::backprop(&node.op, &input_vals, &node.value, &adjoint, self.fault);
                for (&input_id, contrib) in node.inputs.iter().zip(contributions) {
                    match &mut adjoints[input_id] {
                        Some(acc) => {
                            for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                                *a += c;
                            }
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            adjoints[id] = Some(adjoint);
        }

        // Unreached leaves still report a zero gradient.
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && adjoints[id].is_none() {
                adjoints[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: adjoints })
    }

    // ── op builders ──────────────────────────────────────────────────

    fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let vals: Vec<&Tensor> = ids.iter().map(|&i| &self.nodes[i].value).collect();
        let value = kernels::eval(&op, &vals)?;
        Ok(self.push(op, ids, value))
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    /// `mul * x + add`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Result<Var> {
        self.apply(Op::Affine { mul, add }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.affine(x, factor, 0.0)
    }

    /// Rank-2 matrix product `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    /// Adds a vector along the feature axis: `[n,f] + [f]`, or per channel
    /// for `[n,c,h,w] + [c]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.apply(Op::AddBias, &[x, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Relu, &[x])
    }

    /// `max(0, x)` — same kernel as [`Graph::relu`], named for hinge terms.
    pub fn hinge(&mut self, x: Var) -> Result<Var> {
        self.relu(x)
    }

    /// Valid-padding stride-1 convolution of `[n,ci,h,w]` with a
    /// `[co,ci,kh,kw]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        self.apply(Op::Conv2d, &[input, kernel])
    }

    /// Symmetric zero padding of the two trailing spatial axes.
    pub fn zero_pad2d(&mut self, input: Var, pad: usize) -> Result<Var> {
        self.apply(Op::ZeroPad2d { pad }, &[input])
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2x2(&mut self, input: Var) -> Result<Var> {
        self.apply(Op::MaxPool2x2, &[input])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Square, &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sqrt, &[x])
    }

    /// `ln(max(x, 1e-12))` — the clamp keeps cross-entropy finite on
    /// degenerate probabilities.
    pub fn log_clamped(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::LogClamped, &[x])
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Mean, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Op::Reshape { shape }, &[x])
    }

    /// Flattens all trailing axes: `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        if shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "flatten",
                lhs: shape.to_vec(),
                rhs: vec![],
            });
        }
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    /// Selects rows along axis 0, in the given order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        let rows = self.value(x).shape().first().copied().unwrap_or(0);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfBounds {
                what: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        self.apply(Op::GatherRows { indices }, &[x])
    }

    /// Euclidean norm of `a - b`: scalar for vectors, per-row `[n]` for
    /// `[n,d]` matrices. Zero differences propagate zero gradients.
    pub fn norm_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::NormDiff, &[a, b])
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`. Always present for leaves;
    /// `None` for derived nodes the root does not depend on.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests;
