//! Finite-difference oracles for checking derivative code.
//!
//! [`Primitive`] wraps each executor primitive as a one-operation program,
//! so dual tangents and tape adjoints can be compared against central
//! differences of plain evaluation.

use crate::error::{Error, Result};
use crate::fwdad::{DualExec, DualTensor};
use crate::params::ParamSet;
use crate::program::{evaluate, Exec, Program, RealExec};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Step used by the central differences in this module.
pub const EPS: f64 = 1e-6;

/// `|a − b| / max(|b|, 1)`: relative for large values, absolute near zero.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared vectors differ in length");
    a.iter().zip(b).map(|(&x, &y)| rel_error(x, y)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Offset(f64),
    Sum,
    MatMul,
    AddBias,
    Relu,
    Conv2d,
    MaxPool2d,
    Reshape(Vec<usize>),
    LogSoftmaxNll(Vec<usize>),
}

impl Primitive {
    pub const NAMES: [&'static str; 13] = [
        "add", "sub", "mul", "scale", "offset", "sum", "matmul", "add_bias", "relu", "conv2d", "maxpool2d", "reshape",
        "logsoftmax_nll",
    ];

    pub fn name(&self) -> &'static str {
        let i = match self {
            Primitive::Add => 0,
            Primitive::Sub => 1,
            Primitive::Mul => 2,
            Primitive::Scale(_) => 3,
            Primitive::Offset(_) => 4,
            Primitive::Sum => 5,
            Primitive::MatMul => 6,
            Primitive::AddBias => 7,
            Primitive::Relu => 8,
            Primitive::Conv2d => 9,
            Primitive::MaxPool2d => 10,
            Primitive::Reshape(_) => 11,
            Primitive::LogSoftmaxNll(_) => 12,
        };
        Primitive::NAMES[i]
    }

    /// A random instance of the named primitive with matching random
    /// operands of small, random shape.
    pub fn sample(name: &str, rng: &mut RngState) -> Result<(Primitive, Vec<Tensor>)> {
        let dim = |rng: &mut RngState, lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
        let shape = |rng: &mut RngState| vec![dim(rng, 1, 4), dim(rng, 1, 5)];
        let randn = |rng: &mut RngState| {
            let s = shape(rng);
            Tensor::randn(rng, &s)
        };
        Ok(match name {
            "add" | "sub" | "mul" => {
                let s = shape(rng);
                let op = match name {
                    "add" => Primitive::Add,
                    "sub" => Primitive::Sub,
                    _ => Primitive::Mul,
                };
                (op, vec![Tensor::randn(rng, &s), Tensor::randn(rng, &s)])
            }
            "scale" => {
                let c = 4.0 * rng.next_f64() - 2.0;
                (Primitive::Scale(c), vec![randn(rng)])
            }
            "offset" => {
                let c = 4.0 * rng.next_f64() - 2.0;
                (Primitive::Offset(c), vec![randn(rng)])
            }
            "sum" => (Primitive::Sum, vec![randn(rng)]),
            "matmul" => {
                let (m, k, p) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
                (Primitive::MatMul, vec![Tensor::randn(rng, &[m, k]), Tensor::randn(rng, &[k, p])])
            }
            "add_bias" => {
                let (b, k) = (dim(rng, 1, 4), dim(rng, 1, 6));
                (Primitive::AddBias, vec![Tensor::randn(rng, &[b, k]), Tensor::randn(rng, &[k])])
            }
            "relu" => (Primitive::Relu, vec![randn(rng)]),
            "conv2d" => {
                let (n, c, o) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
                let (kh, kw) = (dim(rng, 1, 3), dim(rng, 1, 3));
                let (h, w) = (kh + dim(rng, 0, 4), kw + dim(rng, 0, 4));
                (
                    Primitive::Conv2d,
                    vec![Tensor::randn(rng, &[n, c, h, w]), Tensor::randn(rng, &[o, c, kh, kw])],
                )
            }
            "maxpool2d" => {
                let s = [dim(rng, 1, 2), dim(rng, 1, 3), 2 * dim(rng, 1, 3), 2 * dim(rng, 1, 3)];
                (Primitive::MaxPool2d, vec![Tensor::randn(rng, &s)])
            }
            "reshape" => {
                let (a, b) = (dim(rng, 1, 4), dim(rng, 1, 4));
                (Primitive::Reshape(vec![b, a]), vec![Tensor::randn(rng, &[a, b])])
            }
            "logsoftmax_nll" => {
                let (b, k) = (dim(rng, 1, 5), dim(rng, 2, 6));
                let labels = (0..b).map(|_| rng.below(k)).collect();
                let logits = Tensor::randn(rng, &[b, k]).scale(2.0);
                (Primitive::LogSoftmaxNll(labels), vec![logits])
            }
            other => return Err(Error::Validation(format!("unknown primitive {other:?}"))),
        })
    }
}

impl Program for Primitive {
    fn run<E: Exec>(&self, exec: &mut E, p: &[E::Value]) -> Result<E::Value> {
        match self {
            Primitive::Add => exec.add(&p[0], &p[1]),
            Primitive::Sub => exec.sub(&p[0], &p[1]),
            Primitive::Mul => exec.mul(&p[0], &p[1]),
            Primitive::Scale(c) => Ok(exec.scale(&p[0], *c)),
            Primitive::Offset(c) => Ok(exec.offset(&p[0], *c)),
            Primitive::Sum => Ok(exec.sum(&p[0])),
            Primitive::MatMul => exec.matmul(&p[0], &p[1]),
            Primitive::AddBias => exec.add_bias(&p[0], &p[1]),
            Primitive::Relu => Ok(exec.relu(&p[0])),
            Primitive::Conv2d => exec.conv2d(&p[0], &p[1]),
            Primitive::MaxPool2d => exec.maxpool2d(&p[0]),
            Primitive::Reshape(s) => exec.reshape(&p[0], s),
            Primitive::LogSoftmaxNll(labels) => exec.logsoftmax_nll(&p[0], labels),
        }
    }
}

/// Runs `program` on dual inputs and compares the output tangent with
/// `(f(x + εẋ) − f(x − εẋ)) / 2ε`, elementwise. Returns the largest
/// [`rel_error`].
pub fn tangent_vs_fd<P: Program + ?Sized>(program: &P, inputs: &[Tensor], tangents: &[Tensor]) -> Result<f64> {
    let duals = inputs
        .iter()
        .zip(tangents)
        .map(|(x, t)| DualTensor::new(x.clone(), t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = program.run(&mut DualExec, &duals)?;
    let shifted = |sign: f64| -> Result<Tensor> {
        let xs = inputs
            .iter()
            .zip(tangents)
            .map(|(x, t)| x.add_scaled(t, sign * EPS))
            .collect::<Result<Vec<_>>>()?;
        program.run(&mut RealExec, &xs)
    };
    let (hi, lo) = (shifted(1.0)?, shifted(-1.0)?);
    let fd: Vec<f64> = hi.data().iter().zip(lo.data()).map(|(a, b)| (a - b) / (2.0 * EPS)).collect();
    Ok(max_rel_error(out.tangent_or_zeros().data(), &fd))
}

/// Central difference of a scalar program along flat coordinate `index` of
/// `params`.
pub fn fd_partial<P: Program + ?Sized>(program: &P, params: &ParamSet, index: usize) -> Result<f64> {
    let flat = params.flatten();
    let bumped = |delta: f64| -> Result<f64> {
        let mut v = flat.to_vec();
        v[index] += delta;
        evaluate(program, &params.unflatten(&Tensor::new(&[v.len()], v)?)?)
    };
    Ok((bumped(EPS)? - bumped(-EPS)?) / (2.0 * EPS))
}
