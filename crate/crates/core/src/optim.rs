//! Forward gradient descent, the backpropagation SGD baseline, and the
//! exponential learning-rate decay `η_t = η₀·e^(−t·k)`.
//!
//! Both steps are plain SGD updates `θ ← θ − η·g`; they differ only in how
//! `g` is obtained. [`fgd_step`] uses one forward-mode run and never touches
//! the reverse-mode code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fwdad::{self, DualTensor, Perturbation};
use crate::params::ParamSet;
use crate::program::Program;
use crate::revad;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Forward gradient descent.
    Fgd,
    /// SGD on reverse-mode gradients.
    Backprop,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fgd => "fgd",
            Method::Backprop => "backprop",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgd" | "forward" => Ok(Method::Fgd),
            "backprop" | "sgd" | "gd" => Ok(Method::Backprop),
            other => Err(Error::Validation(format!(
                "unknown method {other:?} (expected fgd or backprop)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptState {
    step: u64,
    lr0: f64,
    decay: f64,
    rng: RngState,
}

impl OptState {
    /// `lr0` must be positive and finite, `decay` non-negative.
    pub fn new(lr0: f64, decay: f64, rng: RngState) -> Result<Self> {
        if !(lr0 > 0.0 && lr0.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {lr0}")));
        }
        if !(decay >= 0.0 && decay.is_finite()) {
            return Err(Error::Validation(format!("decay must be non-negative, got {decay}")));
        }
        Ok(OptState {
            step: 0,
            lr0,
            decay,
            rng,
        })
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Learning rate for the next step.
    pub fn lr(&self) -> f64 {
        self.lr0 * (-(self.step as f64) * self.decay).exp()
    }

    pub fn rng(&self) -> &RngState {
        &self.rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `f(θ_t)` before the update.
    pub loss: f64,
    pub lr: f64,
    /// `∇f·v` for forward steps.
    pub derivative: Option<f64>,
}

/// `θ ← θ − η·d·v` with `v ~ N(0, I)` and `d = ∇f(θ)·v` from one forward
/// run.
pub fn fgd_step<P: Program + ?Sized>(program: &P, params: &mut ParamSet, state: &mut OptState) -> Result<StepReport> {
    let duals = fwdad::sample_seeded(params, &mut state.rng)?;
    fgd_update(program, params, state, duals)
}

/// [`fgd_step`] along a given direction instead of a sampled one.
pub fn fgd_step_with<P: Program + ?Sized>(
    program: &P,
    params: &mut ParamSet,
    state: &mut OptState,
    v: &Perturbation,
) -> Result<StepReport> {
    fgd_update(program, params, state, fwdad::seed(params, v)?)
}

fn fgd_update<P: Program + ?Sized>(
    program: &P,
    params: &mut ParamSet,
    state: &mut OptState,
    duals: Vec<DualTensor>,
) -> Result<StepReport> {
    let (loss, d) = fwdad::jvp(program, &duals)?;
    let lr = state.lr();
    for (i, dual) in duals.into_iter().enumerate() {
        let tangent = dual.tangent().expect("seeded parameters carry tangents");
        let updated = params.tensor(i).add_scaled(tangent, -lr * d)?;
        params.set(i, updated);
    }
    state.step += 1;
    Ok(StepReport {
        loss,
        lr,
        derivative: Some(d),
    })
}

/// `θ ← θ − η·∇f(θ)` with the gradient from reverse mode.
pub fn sgd_step<P: Program + ?Sized>(program: &P, params: &mut ParamSet, state: &mut OptState) -> Result<StepReport> {
    let (loss, grads) = revad::grad_parts(program, params)?;
    let lr = state.lr();
    for (i, g) in grads.iter().enumerate() {
        let updated = params.tensor(i).add_scaled(g, -lr)?;
        params.set(i, updated);
    }
    state.step += 1;
    Ok(StepReport {
        loss,
        lr,
        derivative: None,
    })
}

/// Dispatches to [`fgd_step`] or [`sgd_step`].
pub fn step<P: Program + ?Sized>(
    method: Method,
    program: &P,
    params: &mut ParamSet,
    state: &mut OptState,
) -> Result<StepReport> {
    match method {
        Method::Fgd => fgd_step(program, params, state),
        Method::Backprop => sgd_step(program, params, state),
    }
}
