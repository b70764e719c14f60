//! Split execution of a quantized multi-branch network across an untrusted
//! fog node and a trusted edge node, with redundant-branch verification.
//!
//! * [`qtensor`]: bit-exact integer kernels.
//! * [`netmodel`]: the trunk / branches / head network and its accounting.
//! * [`protocol`]: wire format, branch selection and the edge verifier.
//! * [`simulator`]: discrete-event model of edge, fog, link and adversary.
//! * [`planner`]: cut-point latency model and detection probability.
//! * [`selftest`]: golden vectors and oracle cross-checks.

pub mod qtensor;

pub use qtensor::{QuantLayerParams, QuantTensor, Shape};
pub mod netmodel;

pub mod planner;
pub mod protocol;
pub mod selftest;
pub mod simulator;

pub use netmodel::{Model, ModelWeights, NetworkPlan, PoseEstimate};

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(data: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(data))
}
