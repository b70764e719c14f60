//! Shared fixtures for the benchmarks.

use splitguard::netmodel::{synthetic_frame, Model, NetworkPlan};
use splitguard::QuantTensor;

/// Toy model with `n` branches and one synthetic frame.
pub fn fixture(n: usize) -> (Model, QuantTensor) {
    let model = Model::generate(NetworkPlan::toy(n), 0).expect("toy plan is valid");
    let img = synthetic_frame(model.plan().input_shape, 0, 0);
    (model, img)
}
