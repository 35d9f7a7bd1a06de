//! Tape-based reverse-mode AD, the backpropagation baseline.
//!
//! Running a [`Program`] on a [`Tape`] records every primitive with the
//! values its backward rule needs. [`Tape::backward`] then walks the tape
//! in reverse, seeding the output adjoint with 1 and accumulating input
//! adjoints with `+=` so fan-out sums correctly.

use crate::error::{Error, Result};
use crate::instrument;
use crate::params::ParamSet;
use crate::program::{expect_scalar, Exec, Program};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Sum(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Conv2d(Var, Var),
    MaxPool { input: Var, argmax: Vec<usize> },
    Reshape(Var),
    LogSoftmaxNll { logits: Var, probs: Tensor, labels: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of primitive applications. Inputs always precede the
/// nodes that use them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
}

impl Adjoints {
    /// Adjoint of `var`, or `None` if the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. `requires_grad` marks parameters.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |x: &Var| &vals[x.0];
            let out = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Add(a, b) => v(a).add(v(b))?,
                Op::Sub(a, b) => v(a).sub(v(b))?,
                Op::Mul(a, b) => v(a).mul(v(b))?,
                Op::Scale(a, c) => v(a).scale(*c),
                Op::Offset(a, c) => v(a).offset(*c),
                Op::Sum(a) => Tensor::scalar(v(a).sum()),
                Op::MatMul(a, b) => tensor::matmul(v(a), v(b))?,
                Op::AddBias(x, b) => v(x).add_bias(v(b))?,
                Op::Relu(x) => v(x).relu(),
                Op::Conv2d(x, k) => tensor::conv2d(v(x), v(k))?,
                Op::MaxPool { input, .. } => tensor::maxpool2d(v(input))?.output,
                Op::Reshape(x) => v(x).reshape(node.value.shape())?,
                Op::LogSoftmaxNll { logits, labels, .. } => {
                    Tensor::scalar(tensor::logsoftmax_nll(v(logits), labels)?)
                }
            };
            vals.push(out);
        }
        Ok(vals)
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Adjoints> {
        let out = &self.nodes[output.0].value;
        if out.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        instrument::record_backward();
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(out.shape()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(adj) = grads[i].take() else { continue };
            self.backward_rule(node, &adj, &mut grads)?;
            // Leaves keep their adjoints; interior ones are no longer needed.
        }
        Ok(Adjoints { grads })
    }

    /// Accumulates `contrib` into the adjoint of `var` if it needs one.
    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contrib: Tensor) -> Result<()> {
        if !self.needs(var) {
            return Ok(());
        }
        let expected = self.nodes[var.0].value.shape();
        if contrib.shape() != expected {
            return Err(Error::Internal(format!(
                "adjoint of shape {:?} for node {} of shape {expected:?}",
                contrib.shape(),
                var.0
            )));
        }
        match &mut grads[var.0] {
            Some(acc) => acc.axpy_assign(&contrib, 1.0)?,
            slot => *slot = Some(contrib),
        }
        Ok(())
    }

    fn backward_rule(&self, node: &Node, adj: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, adj.clone())?;
                self.accumulate(grads, *b, adj.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, adj.clone())?;
                if self.needs(*b) {
                    self.accumulate(grads, *b, adj.scale(-1.0))?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, adj.mul(val(b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, val(a).mul(adj)?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, adj.scale(*c))?,
            Op::Offset(a, _) => self.accumulate(grads, *a, adj.clone())?,
            Op::Sum(a) => {
                let g = adj.item()?;
                self.accumulate(grads, *a, Tensor::full(val(a).shape(), g))?;
            }
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, tensor::matmul_nt(adj, val(b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, tensor::matmul_tn(val(a), adj)?)?;
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, adj.clone())?;
                if self.needs(*b) {
                    self.accumulate(grads, *b, adj.sum_rows()?)?;
                }
            }
            Op::Relu(x) => {
                self.accumulate(grads, *x, val(x).relu_mask(adj)?)?;
            }
            Op::Conv2d(x, k) => {
                if self.needs(*x) {
                    let g = tensor::conv2d_input_grad(adj, val(k), val(x).shape())?;
                    self.accumulate(grads, *x, g)?;
                }
                if self.needs(*k) {
                    let g = tensor::conv2d_kernel_grad(val(x), adj, val(k).shape())?;
                    self.accumulate(grads, *k, g)?;
                }
            }
            Op::MaxPool { input, argmax } => {
                let g = tensor::maxpool2d_scatter(adj, argmax, val(input).shape())?;
                self.accumulate(grads, *input, g)?;
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, adj.reshape(val(x).shape())?)?;
            }
            Op::LogSoftmaxNll { logits, probs, labels } => {
                // (softmax − onehot) / B, scaled by the incoming adjoint.
                let scale = adj.item()? / labels.len() as f64;
                let k = probs.shape()[1];
                let mut g = probs.scale(scale);
                let data = g.make_mut();
                for (row, &y) in labels.iter().enumerate() {
                    data[row * k + y] -= scale;
                }
                self.accumulate(grads, *logits, g)?;
            }
        }
        Ok(())
    }
}

impl Exec for Tape {
    type Value = Var;

    fn constant(&mut self, value: &Tensor) -> Var {
        self.leaf(value.clone(), false)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(*a).add(self.value(*b))?;
        Ok(self.push(v, Op::Add(*a, *b), &[*a, *b]))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(*a).sub(self.value(*b))?;
        Ok(self.push(v, Op::Sub(*a, *b), &[*a, *b]))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.value(*a).mul(self.value(*b))?;
        Ok(self.push(v, Op::Mul(*a, *b), &[*a, *b]))
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = self.value(*a).scale(c);
        self.push(v, Op::Scale(*a, c), &[*a])
    }

    fn offset(&mut self, a: &Var, c: f64) -> Var {
        let v = self.value(*a).offset(c);
        self.push(v, Op::Offset(*a, c), &[*a])
    }

    fn sum(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.value(*a).sum());
        self.push(v, Op::Sum(*a), &[*a])
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = tensor::matmul(self.value(*a), self.value(*b))?;
        Ok(self.push(v, Op::MatMul(*a, *b), &[*a, *b]))
    }

    fn add_bias(&mut self, x: &Var, bias: &Var) -> Result<Var> {
        let v = self.value(*x).add_bias(self.value(*bias))?;
        Ok(self.push(v, Op::AddBias(*x, *bias), &[*x, *bias]))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let v = self.value(*x).relu();
        self.push(v, Op::Relu(*x), &[*x])
    }

    fn conv2d(&mut self, x: &Var, kernel: &Var) -> Result<Var> {
        let v = tensor::conv2d(self.value(*x), self.value(*kernel))?;
        Ok(self.push(v, Op::Conv2d(*x, *kernel), &[*x, *kernel]))
    }

    fn maxpool2d(&mut self, x: &Var) -> Result<Var> {
        let pool = tensor::maxpool2d(self.value(*x))?;
        let op = Op::MaxPool {
            input: *x,
            argmax: pool.argmax,
        };
        Ok(self.push(pool.output, op, &[*x]))
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(*x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(*x), &[*x]))
    }

    fn logsoftmax_nll(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = tensor::logsoftmax_nll_with_probs(self.value(*logits), labels)?;
        let op = Op::LogSoftmaxNll {
            logits: *logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, &[*logits]))
    }
}

/// Records `program` on a fresh tape and returns the parameter leaves and
/// output node.
pub fn record<P: Program + ?Sized>(program: &P, params: &ParamSet) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.tensors().map(|t| tape.leaf(t.clone(), true)).collect();
    instrument::record_forward();
    let out = program.run(&mut tape, &leaves)?;
    Ok((tape, leaves, out))
}

/// `(f(θ), ∇f(θ))` from one recording pass and one reverse sweep. The
/// gradient is flattened in parameter order; the tape is dropped before
/// returning.
pub fn grad<P: Program + ?Sized>(program: &P, params: &ParamSet) -> Result<(f64, Tensor)> {
    let (loss, parts) = grad_parts(program, params)?;
    let mut flat = Vec::with_capacity(params.numel());
    for g in &parts {
        flat.extend_from_slice(g.data());
    }
    let n = flat.len();
    Ok((loss, Tensor::from_parts(vec![n], flat)))
}

/// Like [`grad`], with one gradient tensor per parameter.
pub fn grad_parts<P: Program + ?Sized>(program: &P, params: &ParamSet) -> Result<(f64, Vec<Tensor>)> {
    let (tape, leaves, out) = record(program, params)?;
    let loss = expect_scalar(tape.value(out), "grad")?;
    let adjoints = tape.backward(out)?;
    let parts = leaves
        .iter()
        .zip(params.tensors())
        .map(|(&leaf, p)| {
            adjoints
                .get(leaf)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    Ok((loss, parts))
}
