//! Shared fixtures for the criterion benches under `benches/`.

use fwdgrad::bench::{fixed_batches, INIT_STREAM};
use fwdgrad::data::synthetic;
use fwdgrad::{nn, Batch, ModelSpec, ParamSet, RngState, Tensor};

pub const SEED: u64 = 0;

/// Freshly initialized parameters and one synthetic batch for `spec`.
pub fn model_fixture(spec: &ModelSpec, batch_size: usize) -> (ParamSet, Batch) {
    let data = synthetic(&mut RngState::new(SEED), batch_size.max(10), nn::CLASSES).expect("synthetic data");
    let batch = fixed_batches(&data, batch_size, 1, SEED).expect("batch").remove(0);
    let params = nn::init(spec, &mut RngState::derive(SEED, INIT_STREAM)).expect("init");
    (params, batch)
}

/// Standard normal tensors of the given shapes.
pub fn randn(shapes: &[&[usize]]) -> Vec<Tensor> {
    let mut rng = RngState::new(SEED);
    shapes.iter().map(|s| Tensor::randn(&mut rng, s)).collect()
}
