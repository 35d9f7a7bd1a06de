//! Forward-mode gradients and forward gradient descent, with a reverse-mode
//! baseline and the measurements needed to compare the two.
//!
//! A model is written once as a [`Program`] and evaluated under one of three
//! executors: plain values ([`RealExec`]), dual numbers ([`DualExec`]) or a
//! reverse-mode [`Tape`].

pub mod alloc;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fwdad;
pub mod gradcheck;
pub mod instrument;
pub mod nn;
pub mod optim;
pub mod params;
pub mod program;
pub mod revad;
pub mod rng;
pub mod tensor;
pub mod testfuncs;

pub use alloc::AllocStats;
pub use bench::{BenchReport, CurveRow, ScalingRow, TimingConfig, TrainConfig};
pub use data::{Batch, BatchIterator, Dataset, Split};
pub use error::{Error, Result};
pub use fwdad::{DualExec, DualTensor, ForwardGradient, Perturbation};
pub use instrument::EvalCounts;
pub use nn::{ModelLoss, ModelSpec};
pub use optim::{fgd_step, sgd_step, Method, OptState, StepReport};
pub use params::ParamSet;
pub use program::{evaluate, Exec, Program, RealExec};
pub use revad::{Tape, Var};
pub use rng::RngState;
pub use tensor::Tensor;
pub use testfuncs::TestFunction;
