//! Differentiable programs.
//!
//! A [`Program`] is written once against the [`Exec`] trait and can then be
//! run on plain tensors ([`RealExec`]), on dual tensors
//! ([`crate::fwdad::DualExec`]) or on a recording tape
//! ([`crate::revad::Tape`]). Every primitive a program may use is a method
//! of `Exec`, so each execution mode has a rule for all of them.

use crate::error::{Error, Result};
use crate::instrument;
use crate::params::ParamSet;
use crate::tensor::{self, Tensor};

pub trait Exec {
    type Value: Clone;

    /// Lifts data that is not differentiated (inputs, targets).
    fn constant(&mut self, value: &Tensor) -> Self::Value;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Elementwise product.
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    /// Adds the constant `c` to every element.
    fn offset(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    /// Sum of all elements, as a scalar.
    fn sum(&mut self, a: &Self::Value) -> Self::Value;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add_bias(&mut self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn conv2d(&mut self, x: &Self::Value, kernel: &Self::Value) -> Result<Self::Value>;
    fn maxpool2d(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn reshape(&mut self, x: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    /// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
    fn logsoftmax_nll(&mut self, logits: &Self::Value, labels: &[usize]) -> Result<Self::Value>;
}

/// A scalar-valued function of an ordered parameter list.
pub trait Program {
    fn run<E: Exec>(&self, exec: &mut E, params: &[E::Value]) -> Result<E::Value>;
}

impl<P: Program + ?Sized> Program for &P {
    fn run<E: Exec>(&self, exec: &mut E, params: &[E::Value]) -> Result<E::Value> {
        (**self).run(exec, params)
    }
}

/// Plain evaluation with no derivative bookkeeping.
#[derive(Debug, Default, Clone, Copy)]
pub struct RealExec;

impl Exec for RealExec {
    type Value = Tensor;

    fn constant(&mut self, value: &Tensor) -> Tensor {
        value.clone()
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.scale(c)
    }

    fn offset(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.offset(c)
    }

    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.sum())
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }

    fn add_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        x.add_bias(bias)
    }

    fn relu(&mut self, x: &Tensor) -> Tensor {
        x.relu()
    }

    fn conv2d(&mut self, x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
        tensor::conv2d(x, kernel)
    }

    fn maxpool2d(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::maxpool2d(x)?.output)
    }

    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        x.reshape(shape)
    }

    fn logsoftmax_nll(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        tensor::logsoftmax_nll(logits, labels).map(Tensor::scalar)
    }
}

pub(crate) fn expect_scalar(t: &Tensor, what: &str) -> Result<f64> {
    t.item().map_err(|_| {
        Error::Contract(format!("{what} needs a scalar output, program returned shape {:?}", t.shape()))
    })
}

/// `f(θ)` with no derivative work: the base-runtime workload.
pub fn evaluate<P: Program + ?Sized>(program: &P, params: &ParamSet) -> Result<f64> {
    let values: Vec<Tensor> = params.tensors().cloned().collect();
    instrument::record_forward();
    let out = program.run(&mut RealExec, &values)?;
    expect_scalar(&out, "evaluate")
}
