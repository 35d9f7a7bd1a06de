//! Two-dimensional optimization test functions with closed-form gradients.
//!
//! Each function is also a [`Program`] over two scalar parameters `x` and
//! `y`, so the AD modes can be checked against the analytic gradient.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::program::{Exec, Program};
use crate::tensor::Tensor;

const ROSENBROCK_A: f64 = 1.0;
const ROSENBROCK_B: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    /// `(1.5 − x + xy)² + (2.25 − x + xy²)² + (2.625 − x + xy³)²`
    Beale,
    /// `(a − x)² + b(y − x²)²` with `a = 1`, `b = 100`.
    Rosenbrock,
}

pub fn beale(x: f64, y: f64) -> f64 {
    let r1 = 1.5 - x + x * y;
    let r2 = 2.25 - x + x * y * y;
    let r3 = 2.625 - x + x * y * y * y;
    r1 * r1 + r2 * r2 + r3 * r3
}

pub fn beale_gradient(x: f64, y: f64) -> [f64; 2] {
    let r1 = 1.5 - x + x * y;
    let r2 = 2.25 - x + x * y * y;
    let r3 = 2.625 - x + x * y * y * y;
    [
        2.0 * r1 * (y - 1.0) + 2.0 * r2 * (y * y - 1.0) + 2.0 * r3 * (y * y * y - 1.0),
        2.0 * r1 * x + 2.0 * r2 * 2.0 * x * y + 2.0 * r3 * 3.0 * x * y * y,
    ]
}

pub fn rosenbrock(x: f64, y: f64) -> f64 {
    let (u, w) = (ROSENBROCK_A - x, y - x * x);
    u * u + ROSENBROCK_B * w * w
}

pub fn rosenbrock_gradient(x: f64, y: f64) -> [f64; 2] {
    let w = y - x * x;
    [
        -2.0 * (ROSENBROCK_A - x) - 4.0 * ROSENBROCK_B * x * w,
        2.0 * ROSENBROCK_B * w,
    ]
}

impl TestFunction {
    pub const ALL: [TestFunction; 2] = [TestFunction::Beale, TestFunction::Rosenbrock];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Beale => "beale",
            TestFunction::Rosenbrock => "rosenbrock",
        }
    }

    pub fn evaluate(self, x: f64, y: f64) -> f64 {
        match self {
            TestFunction::Beale => beale(x, y),
            TestFunction::Rosenbrock => rosenbrock(x, y),
        }
    }

    pub fn gradient(self, x: f64, y: f64) -> [f64; 2] {
        match self {
            TestFunction::Beale => beale_gradient(x, y),
            TestFunction::Rosenbrock => rosenbrock_gradient(x, y),
        }
    }

    /// Location and value of the global minimum.
    pub fn minimum(self) -> ([f64; 2], f64) {
        match self {
            TestFunction::Beale => ([3.0, 0.5], 0.0),
            TestFunction::Rosenbrock => ([ROSENBROCK_A, ROSENBROCK_A * ROSENBROCK_A], 0.0),
        }
    }

    /// Default learning rate for trajectory experiments (no decay).
    pub fn default_lr(self) -> f64 {
        match self {
            TestFunction::Beale => 0.01,
            TestFunction::Rosenbrock => 5e-4,
        }
    }

    pub fn default_start(self) -> [f64; 2] {
        match self {
            TestFunction::Beale => [1.5, -0.1],
            TestFunction::Rosenbrock => [-1.0, 1.0],
        }
    }

    /// `{x, y}` as scalar parameters.
    pub fn params(x: f64, y: f64) -> ParamSet {
        ParamSet::new()
            .with("x", Tensor::scalar(x))
            .with("y", Tensor::scalar(y))
    }

    /// Reads `(x, y)` back out of a set built by [`TestFunction::params`].
    pub fn point(params: &ParamSet) -> Result<[f64; 2]> {
        if params.len() != 2 {
            return Err(Error::dim("testfunc", format!("expected 2 parameters, got {}", params.len())));
        }
        Ok([params.tensor(0).item()?, params.tensor(1).item()?])
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "beale" => Ok(TestFunction::Beale),
            "rosenbrock" => Ok(TestFunction::Rosenbrock),
            other => Err(Error::Validation(format!(
                "unknown test function {other:?} (expected beale or rosenbrock)"
            ))),
        }
    }
}

/// `(c − x + x·p)²` for a scalar `p`.
fn residual_sq<E: Exec>(exec: &mut E, c: f64, x: &E::Value, p: &E::Value) -> Result<E::Value> {
    let xp = exec.mul(x, p)?;
    let d = exec.sub(&xp, x)?;
    let r = exec.offset(&d, c);
    exec.mul(&r, &r)
}

impl Program for TestFunction {
    fn run<E: Exec>(&self, exec: &mut E, p: &[E::Value]) -> Result<E::Value> {
        let (x, y) = match p {
            [x, y] => (x, y),
            _ => return Err(Error::dim("testfunc", format!("expected 2 parameters, got {}", p.len()))),
        };
        match self {
            TestFunction::Beale => {
                let y2 = exec.mul(y, y)?;
                let y3 = exec.mul(&y2, y)?;
                let a = residual_sq(exec, 1.5, x, y)?;
                let b = residual_sq(exec, 2.25, x, &y2)?;
                let c = residual_sq(exec, 2.625, x, &y3)?;
                let ab = exec.add(&a, &b)?;
                exec.add(&ab, &c)
            }
            TestFunction::Rosenbrock => {
                let neg_x = exec.scale(x, -1.0);
                let u = exec.offset(&neg_x, ROSENBROCK_A);
                let u2 = exec.mul(&u, &u)?;
                let x2 = exec.mul(x, x)?;
                let w = exec.sub(y, &x2)?;
                let w2 = exec.mul(&w, &w)?;
                let bw2 = exec.scale(&w2, ROSENBROCK_B);
                exec.add(&u2, &bw2)
            }
        }
    }
}
