//! The three-stage pose network: an edge trunk, `n_branches` independent
//! backbone branches run on the fog, and an edge head.

mod plan;
mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plan::*;
pub use weights::*;

use crate::qtensor::{concat_channels, QuantTensor, Shape, TensorError};

/// Exponent of camera frames: pixel `p` in `0..=255` is stored as `p - 128`.
pub const IMAGE_SCALE_SHIFT: i8 = -7;
/// Exponent of pose outputs; the representable range is ±8.
pub const POSE_SCALE_SHIFT: i8 = -4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("cut {0} does not exist")]
    InvalidCut(u8),
    #[error("block {block}: width {width} is not divisible by {branches} branches")]
    Indivisible {
        block: u8,
        width: usize,
        branches: usize,
    },
    #[error("branch index {index} outside 1..={n}")]
    BranchIndex { index: usize, n: usize },
    #[error("expected {expected} branch outputs, got {actual}")]
    BranchCount { expected: usize, actual: usize },
    #[error("input shape {actual} does not match {expected}")]
    InputShape { expected: Shape, actual: Shape },
    #[error("weights do not match plan: {0}")]
    WeightsMismatch(String),
}

/// Quantized pose `(x, y, z, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub raw: [i8; 4],
    pub scale_shift: i8,
}

impl PoseEstimate {
    pub fn from_tensor(t: &QuantTensor) -> Result<Self, ModelError> {
        let raw: [i8; 4] = t.data().try_into().map_err(|_| {
            ModelError::WeightsMismatch(format!(
                "head produced {} values, expected 4",
                t.data().len()
            ))
        })?;
        Ok(Self {
            raw,
            scale_shift: t.scale_shift(),
        })
    }

    pub fn values(&self) -> [f64; 4] {
        let s = 2f64.powi(i32::from(self.scale_shift));
        self.raw.map(|r| f64::from(r) * s)
    }
}

/// Deterministic synthetic camera frame: coarse 8×8 luminance blocks plus
/// per-pixel noise.
pub fn synthetic_frame(shape: Shape, image_seed: u64, frame_id: u32) -> QuantTensor {
    let mut rng = ChaCha20Rng::seed_from_u64(image_seed);
    rng.set_stream(u64::from(frame_id));
    let (bh, bw) = (shape.height.div_ceil(8), shape.width.div_ceil(8));
    let coarse: Vec<i16> = (0..shape.channels * bh * bw)
        .map(|_| rng.random_range(0..=255))
        .collect();
    let mut data = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        for y in 0..shape.height {
            for x in 0..shape.width {
                let base = coarse[(c * bh + y / 8) * bw + x / 8];
                let p = (base + rng.random_range(-16..=16)).clamp(0, 255);
                data.push((p - 128) as i8);
            }
        }
    }
    QuantTensor::new(shape, data, IMAGE_SCALE_SHIFT).expect("length matches shape")
}

/// A plan together with weights that fit it.
#[derive(Debug, Clone)]
pub struct Model {
    plan: NetworkPlan,
    weights: ModelWeights,
    fingerprint: String,
}

impl Model {
    pub fn new(plan: NetworkPlan, weights: ModelWeights) -> Result<Self, ModelError> {
        plan.validate()?;
        let mismatch = |what: &str, want: usize, got: usize| {
            Err(ModelError::WeightsMismatch(format!(
                "{what}: plan needs {want}, weights have {got}"
            )))
        };
        if weights.trunk.len() != plan.trunk_blocks().len() {
            return mismatch(
                "trunk blocks",
                plan.trunk_blocks().len(),
                weights.trunk.len(),
            );
        }
        if weights.branches.len() != plan.n_branches {
            return mismatch("branches", plan.n_branches, weights.branches.len());
        }
        if let Some(b) = weights
            .branches
            .iter()
            .find(|b| b.len() != plan.backbone_blocks().len())
        {
            return mismatch("branch blocks", plan.backbone_blocks().len(), b.len());
        }
        if weights.head.blocks.len() != plan.head_blocks().len() {
            return mismatch(
                "head blocks",
                plan.head_blocks().len(),
                weights.head.blocks.len(),
            );
        }
        let json = serde_json::to_vec(&weights).expect("weights serialize");
        let fingerprint = crate::sha256_hex(&json);
        Ok(Self {
            plan,
            weights,
            fingerprint,
        })
    }

    pub fn generate(plan: NetworkPlan, seed: u64) -> Result<Self, ModelError> {
        let weights = ModelWeights::generate(&plan, seed)?;
        Self::new(plan, weights)
    }

    pub fn plan(&self) -> &NetworkPlan {
        &self.plan
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    /// SHA-256 of the serialized weights, hex encoded.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn n_branches(&self) -> usize {
        self.plan.n_branches
    }

    fn check_input(&self, image: &QuantTensor) -> Result<(), ModelError> {
        if image.shape() != self.plan.input_shape {
            return Err(ModelError::InputShape {
                expected: self.plan.input_shape,
                actual: image.shape(),
            });
        }
        Ok(())
    }

    pub fn trunk_forward(&self, image: &QuantTensor) -> Result<QuantTensor, ModelError> {
        self.check_input(image)?;
        Ok(run_blocks(&self.weights.trunk, image)?)
    }

    /// Runs branch `index` (1-based) on trunk output `t`.
    pub fn branch_forward(&self, index: usize, t: &QuantTensor) -> Result<QuantTensor, ModelError> {
        let n = self.plan.n_branches;
        let blocks = index
            .checked_sub(1)
            .and_then(|i| self.weights.branches.get(i))
            .ok_or(ModelError::BranchIndex { index, n })?;
        Ok(run_blocks(blocks, t)?)
    }

    pub fn all_branches(&self, t: &QuantTensor) -> Result<Vec<QuantTensor>, ModelError> {
        (1..=self.plan.n_branches)
            .map(|i| self.branch_forward(i, t))
            .collect()
    }

    /// Concatenates branch outputs in index order and runs the head.
    pub fn head_forward(&self, branch_outputs: &[QuantTensor]) -> Result<PoseEstimate, ModelError> {
        if branch_outputs.len() != self.plan.n_branches {
            return Err(ModelError::BranchCount {
                expected: self.plan.n_branches,
                actual: branch_outputs.len(),
            });
        }
        let h = concat_channels(branch_outputs)?;
        PoseEstimate::from_tensor(&self.weights.head.forward(&h)?)
    }

    pub fn fallback_forward(&self, image: &QuantTensor) -> Result<PoseEstimate, ModelError> {
        self.check_input(image)?;
        PoseEstimate::from_tensor(&self.weights.fallback.forward(image)?)
    }

    /// Whole split pipeline on one device.
    pub fn forward(&self, image: &QuantTensor) -> Result<PoseEstimate, ModelError> {
        let t = self.trunk_forward(image)?;
        self.head_forward(&self.all_branches(&t)?)
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count()
    }

    pub fn fallback_param_count(&self) -> usize {
        self.weights.fallback_param_count()
    }
}

impl BaseWeights {
    /// Unsplit single-device inference.
    pub fn forward(
        &self,
        plan: &NetworkPlan,
        image: &QuantTensor,
    ) -> Result<PoseEstimate, ModelError> {
        if image.shape() != plan.input_shape {
            return Err(ModelError::InputShape {
                expected: plan.input_shape,
                actual: image.shape(),
            });
        }
        let t = run_blocks(&self.trunk, image)?;
        let b = run_blocks(&self.backbone, &t)?;
        PoseEstimate::from_tensor(&self.head.forward(&b)?)
    }
}
