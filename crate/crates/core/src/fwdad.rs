//! Forward-mode AD on dual tensors and the forward gradient.
//!
//! A [`DualTensor`] carries a primal value and a tangent through a program,
//! so one run of a [`Program`] under [`DualExec`] yields both `f(θ)` and the
//! directional derivative `∇f(θ)·v`. The forward gradient is that scalar
//! times `v`: with `v ~ N(0, I)` it is an unbiased estimate of `∇f(θ)` and
//! needs no backward pass.

use crate::error::{Error, Result};
use crate::instrument;
use crate::params::ParamSet;
use crate::program::{expect_scalar, Exec, Program};
use crate::rng::RngState;
use crate::tensor::{self, Tensor};

/// A primal value and its tangent. A missing tangent is identically zero,
/// which lets data inputs skip all tangent arithmetic.
#[derive(Debug, Clone)]
pub struct DualTensor {
    primal: Tensor,
    tangent: Option<Tensor>,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            return Err(Error::shapes("dual", primal.shape(), tangent.shape()));
        }
        Ok(DualTensor {
            primal,
            tangent: Some(tangent),
        })
    }

    /// A value with zero tangent.
    pub fn constant(primal: Tensor) -> Self {
        DualTensor {
            primal,
            tangent: None,
        }
    }

    pub fn primal(&self) -> &Tensor {
        &self.primal
    }

    /// `None` when the tangent is structurally zero.
    pub fn tangent(&self) -> Option<&Tensor> {
        self.tangent.as_ref()
    }

    /// The tangent, materializing zeros if needed.
    pub fn tangent_or_zeros(&self) -> Tensor {
        self.tangent
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.primal.shape()))
    }

    pub fn shape(&self) -> &[usize] {
        self.primal.shape()
    }

    fn from_parts(primal: Tensor, tangent: Option<Tensor>) -> Self {
        debug_assert!(tangent.as_ref().is_none_or(|t| t.shape() == primal.shape()));
        DualTensor { primal, tangent }
    }
}

/// Sum of two optional tangents where `None` is zero.
fn add_tangents(a: Option<Tensor>, b: Option<Tensor>) -> Result<Option<Tensor>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.add(&b)?),
        (a, b) => a.or(b),
    })
}

/// Propagates (primal, tangent) pairs through the primitives.
#[derive(Debug, Default, Clone, Copy)]
pub struct DualExec;

impl Exec for DualExec {
    type Value = DualTensor;

    fn constant(&mut self, value: &Tensor) -> DualTensor {
        DualTensor::constant(value.clone())
    }

    fn add(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let primal = a.primal.add(&b.primal)?;
        let tangent = add_tangents(a.tangent.clone(), b.tangent.clone())?;
        Ok(DualTensor::from_parts(primal, tangent))
    }

    fn sub(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let primal = a.primal.sub(&b.primal)?;
        let tangent = match (&a.tangent, &b.tangent) {
            (Some(ta), Some(tb)) => Some(ta.sub(tb)?),
            (Some(ta), None) => Some(ta.clone()),
            (None, Some(tb)) => Some(tb.scale(-1.0)),
            (None, None) => None,
        };
        Ok(DualTensor::from_parts(primal, tangent))
    }

    fn mul(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let primal = a.primal.mul(&b.primal)?;
        let left = a.tangent.as_ref().map(|t| t.mul(&b.primal)).transpose()?;
        let right = b.tangent.as_ref().map(|t| a.primal.mul(t)).transpose()?;
        Ok(DualTensor::from_parts(primal, add_tangents(left, right)?))
    }

    fn scale(&mut self, a: &DualTensor, c: f64) -> DualTensor {
        DualTensor::from_parts(a.primal.scale(c), a.tangent.as_ref().map(|t| t.scale(c)))
    }

    fn offset(&mut self, a: &DualTensor, c: f64) -> DualTensor {
        DualTensor::from_parts(a.primal.offset(c), a.tangent.clone())
    }

    fn sum(&mut self, a: &DualTensor) -> DualTensor {
        DualTensor::from_parts(
            Tensor::scalar(a.primal.sum()),
            a.tangent.as_ref().map(|t| Tensor::scalar(t.sum())),
        )
    }

    fn matmul(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let primal = tensor::matmul(&a.primal, &b.primal)?;
        let left = a.tangent.as_ref().map(|t| tensor::matmul(t, &b.primal)).transpose()?;
        let right = b.tangent.as_ref().map(|t| tensor::matmul(&a.primal, t)).transpose()?;
        Ok(DualTensor::from_parts(primal, add_tangents(left, right)?))
    }

    fn add_bias(&mut self, x: &DualTensor, bias: &DualTensor) -> Result<DualTensor> {
        let primal = x.primal.add_bias(&bias.primal)?;
        let tangent = match (&x.tangent, &bias.tangent) {
            (Some(tx), Some(tb)) => Some(tx.add_bias(tb)?),
            (None, Some(tb)) => Some(Tensor::zeros(primal.shape()).add_bias(tb)?),
            (tx, None) => tx.clone(),
        };
        Ok(DualTensor::from_parts(primal, tangent))
    }

    fn relu(&mut self, x: &DualTensor) -> DualTensor {
        let tangent = x
            .tangent
            .as_ref()
            .map(|t| x.primal.relu_mask(t).expect("dual shapes agree"));
        DualTensor::from_parts(x.primal.relu(), tangent)
    }

    fn conv2d(&mut self, x: &DualTensor, kernel: &DualTensor) -> Result<DualTensor> {
        let primal = tensor::conv2d(&x.primal, &kernel.primal)?;
        let left = x.tangent.as_ref().map(|t| tensor::conv2d(t, &kernel.primal)).transpose()?;
        let right = kernel.tangent.as_ref().map(|t| tensor::conv2d(&x.primal, t)).transpose()?;
        Ok(DualTensor::from_parts(primal, add_tangents(left, right)?))
    }

    fn maxpool2d(&mut self, x: &DualTensor) -> Result<DualTensor> {
        let pool = tensor::maxpool2d(&x.primal)?;
        let tangent = x
            .tangent
            .as_ref()
            .map(|t| t.gather(&pool.argmax, pool.output.shape()))
            .transpose()?;
        Ok(DualTensor::from_parts(pool.output, tangent))
    }

    fn reshape(&mut self, x: &DualTensor, shape: &[usize]) -> Result<DualTensor> {
        Ok(DualTensor::from_parts(
            x.primal.reshape(shape)?,
            x.tangent.as_ref().map(|t| t.reshape(shape)).transpose()?,
        ))
    }

    fn logsoftmax_nll(&mut self, logits: &DualTensor, labels: &[usize]) -> Result<DualTensor> {
        let Some(dz) = &logits.tangent else {
            let loss = tensor::logsoftmax_nll(&logits.primal, labels)?;
            return Ok(DualTensor::constant(Tensor::scalar(loss)));
        };
        let (loss, probs) = tensor::logsoftmax_nll_with_probs(&logits.primal, labels)?;
        // d/dt of mean_b [lse(z_b) − z_b,y] = mean_b [Σ_k p_bk ż_bk − ż_b,y]
        let k = probs.shape()[1];
        let mut total = 0.0;
        for ((p, t), &y) in probs
            .data()
            .chunks_exact(k)
            .zip(dz.data().chunks_exact(k))
            .zip(labels)
        {
            let expected: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
            total += expected - t[y];
        }
        let tangent = total / labels.len() as f64;
        Ok(DualTensor::from_parts(
            Tensor::scalar(loss),
            Some(Tensor::scalar(tangent)),
        ))
    }
}

/// A direction in parameter space, flattened to length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation(Tensor);

impl Perturbation {
    /// Uses a caller-chosen direction instead of a sampled one. Intended
    /// for tests and diagnostics; optimization always samples.
    pub fn from_tensor(v: Tensor) -> Result<Self> {
        let n = v.numel();
        Ok(Perturbation(v.reshape(&[n])?))
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Perturbation::from_tensor(Tensor::from_slice(&[v.len()], v)?)
    }

    /// The standard basis vector `e_i` in `R^n`.
    pub fn basis(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::Index {
                op: "basis",
                index: i,
                bound: n,
            });
        }
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Perturbation::from_tensor(Tensor::from_parts(vec![n], v))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n` i.i.d. standard normal draws from `rng`.
pub fn sample_perturbation(rng: &mut RngState, n: usize) -> Result<Perturbation> {
    if n == 0 {
        return Err(Error::Validation("perturbation length must be at least 1".into()));
    }
    Ok(Perturbation(Tensor::randn(rng, &[n])))
}

/// Pairs each parameter with its slice of `v` as tangent.
pub fn seed(params: &ParamSet, v: &Perturbation) -> Result<Vec<DualTensor>> {
    let tangents = params.split(v.as_tensor())?;
    params
        .tensors()
        .zip(tangents)
        .map(|(p, t)| DualTensor::new(p.clone(), t))
        .collect()
}

/// Draws each parameter's tangent straight from `rng`. Equivalent to
/// `seed(params, &sample_perturbation(rng, n)?)` draw for draw, without
/// materializing the flat vector.
pub fn sample_seeded(params: &ParamSet, rng: &mut RngState) -> Result<Vec<DualTensor>> {
    if params.numel() == 0 {
        return Err(Error::Validation("perturbation length must be at least 1".into()));
    }
    params
        .tensors()
        .map(|p| DualTensor::new(p.clone(), Tensor::randn(rng, p.shape())))
        .collect()
}

/// One forward run of `program` on already-seeded parameters, returning
/// `(f, ∇f·v)`.
pub fn jvp<P: Program + ?Sized>(program: &P, duals: &[DualTensor]) -> Result<(f64, f64)> {
    instrument::record_forward();
    let out = program.run(&mut DualExec, duals)?;
    let loss = expect_scalar(out.primal(), "jvp")?;
    let derivative = match out.tangent() {
        Some(t) => expect_scalar(t, "jvp")?,
        None => 0.0,
    };
    Ok((loss, derivative))
}

/// `(f(θ), ∇f(θ)·v)` from a single forward evaluation.
pub fn directional_derivative<P: Program + ?Sized>(
    program: &P,
    params: &ParamSet,
    v: &Perturbation,
) -> Result<(f64, f64)> {
    jvp(program, &seed(params, v)?)
}

#[derive(Debug, Clone)]
pub struct ForwardGradient {
    pub loss: f64,
    /// The directional derivative `∇f·v`.
    pub derivative: f64,
    /// `(∇f·v) v`, flattened.
    pub gradient: Tensor,
}

/// Samples `v ~ N(0, I)` (exactly `n` draws from `rng`) and returns the
/// forward gradient `(∇f·v) v`.
pub fn forward_gradient<P: Program + ?Sized>(
    program: &P,
    params: &ParamSet,
    rng: &mut RngState,
) -> Result<ForwardGradient> {
    let v = sample_perturbation(rng, params.numel())?;
    forward_gradient_with(program, params, &v)
}

/// [`forward_gradient`] along a given direction.
pub fn forward_gradient_with<P: Program + ?Sized>(
    program: &P,
    params: &ParamSet,
    v: &Perturbation,
) -> Result<ForwardGradient> {
    let (loss, derivative) = directional_derivative(program, params, v)?;
    Ok(ForwardGradient {
        loss,
        derivative,
        gradient: v.as_tensor().scale(derivative),
    })
}

/// The exact gradient assembled from `n` forward runs along `e_1 … e_n`.
pub fn basis_gradient<P: Program + ?Sized>(program: &P, params: &ParamSet) -> Result<Tensor> {
    let n = params.numel();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let (_, d) = directional_derivative(program, params, &Perturbation::basis(n, i)?)?;
        grad.push(d);
    }
    Ok(Tensor::from_parts(vec![n], grad))
}
