//! Golden vectors and oracle cross-checks, runnable from a release binary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{synthetic_frame, BlockLayers, Model, NetworkPlan, PoseEstimate, QuantBlock};
use crate::protocol::{
    decode_frame, encode_frame, verify_branch, BranchSelector, FrameMessage, Verdict, WireError,
};
use crate::qtensor::{
    canonical_bytes, concat_channels, conv2d_q, fully_connected_q, global_avg_pool_q, reference,
    ConvKind, QuantLayerParams, QuantTensor, Shape,
};

const BUNDLED: &str = include_str!("../data/golden.json");

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("golden file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub shape: [usize; 3],
    pub data: Vec<i8>,
    pub scale_shift: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireKind {
    Tensor,
    BranchSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireVector {
    pub name: String,
    pub kind: WireKind,
    pub frame_id: u32,
    pub tensors: Vec<TensorSpec>,
    pub hex: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeystreamVector {
    pub name: String,
    pub seed_hex: String,
    pub words: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawVector {
    pub name: String,
    pub seed_hex: String,
    pub n: usize,
    pub draws: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    /// Canonical bytes of the trunk output.
    Trunk,
    /// Canonical bytes of every branch output, in index order.
    Branches,
    /// Raw pose bytes and exponent of the full split pipeline.
    Pose,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineVector {
    pub name: String,
    pub n_branches: usize,
    pub weights_seed: u64,
    pub image_seed: u64,
    pub frame_id: u32,
    pub stage: PipelineStage,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    pub seed: u64,
    pub layer_cases: usize,
    pub pipeline_frames: u32,
    pub bitflip_frames: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Golden {
    pub wire: Vec<WireVector>,
    pub keystream: Vec<KeystreamVector>,
    pub draws: Vec<DrawVector>,
    pub pipeline: Vec<PipelineVector>,
    pub oracle: OracleSettings,
}

impl Golden {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled golden file parses")
    }

    pub fn from_json(text: &str) -> Result<Self, GoldenError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
        }
        let failed = self.failures().count();
        out.push_str(&format!(
            "{} checks, {} failed\n",
            self.checks.len(),
            failed
        ));
        out
    }

    fn push(&mut self, name: impl Into<String>, result: Result<String, String>) {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }
}

fn tensor(spec: &TensorSpec) -> Result<QuantTensor, String> {
    let [c, h, w] = spec.shape;
    QuantTensor::new(Shape::new(c, h, w), spec.data.clone(), spec.scale_shift)
        .map_err(|e| e.to_string())
}

fn seed32(hex_seed: &str) -> Result<[u8; 32], String> {
    let bytes = hex::decode(hex_seed).map_err(|e| format!("seed: {e}"))?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| format!("seed has {} bytes, need 32", b.len()))
}

fn check_wire(v: &WireVector) -> Result<String, String> {
    let tensors = v
        .tensors
        .iter()
        .map(tensor)
        .collect::<Result<Vec<_>, _>>()?;
    let msg = match v.kind {
        WireKind::Tensor => {
            let [t] = <[QuantTensor; 1]>::try_from(tensors)
                .map_err(|_| "tensor vector needs one tensor")?;
            FrameMessage::tensor(v.frame_id, t)
        }
        WireKind::BranchSet => FrameMessage::branch_set(v.frame_id, tensors),
    };
    let encoded = hex::encode(encode_frame(&msg).map_err(|e| e.to_string())?);
    if encoded != v.hex.to_lowercase() {
        return Err(format!("encoded {encoded}, expected {}", v.hex));
    }
    let bytes = hex::decode(&v.hex).map_err(|e| e.to_string())?;
    let decoded = decode_frame(&bytes).map_err(|e| format!("decode: {e}"))?;
    if decoded != msg {
        return Err("decoded message differs".into());
    }
    // every single-bit flip must be rejected
    for bit in 0..bytes.len() * 8 {
        let mut b = bytes.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        if decode_frame(&b).is_ok() {
            return Err(format!("bit {bit} flip decoded"));
        }
    }
    let mut short = bytes.clone();
    short.pop();
    if !matches!(
        decode_frame(&short),
        Err(WireError::CrcMismatch { .. }) | Err(WireError::Truncated { .. })
    ) {
        return Err("truncation not rejected".into());
    }
    Ok(format!(
        "{} bytes round-trip, all bit flips rejected",
        bytes.len()
    ))
}

fn check_keystream(v: &KeystreamVector) -> Result<String, String> {
    let mut s = BranchSelector::new(seed32(&v.seed_hex)?);
    let got: Vec<u32> = (0..v.words.len()).map(|_| s.next_word()).collect();
    if got != v.words {
        return Err(format!("words {got:08x?}, expected {:08x?}", v.words));
    }
    Ok(format!("{} words", got.len()))
}

fn check_draws(v: &DrawVector) -> Result<String, String> {
    let mut s = BranchSelector::new(seed32(&v.seed_hex)?);
    let got: Vec<usize> = (0..v.draws.len()).map(|_| s.select(v.n)).collect();
    if got != v.draws {
        return Err(format!("draws {got:?}, expected {:?}", v.draws));
    }
    Ok(format!("{} draws over 1..={}", got.len(), v.n))
}

/// Hex SHA-256 of the stage named in `v`.
pub fn pipeline_digest(model: &Model, v: &PipelineVector) -> Result<String, String> {
    let img = synthetic_frame(model.plan().input_shape, v.image_seed, v.frame_id);
    let pose_bytes = |p: PoseEstimate| {
        let mut b: Vec<u8> = p.raw.iter().map(|&r| r as u8).collect();
        b.push(p.scale_shift as u8);
        b
    };
    let e = |e: crate::netmodel::ModelError| e.to_string();
    let bytes = match v.stage {
        PipelineStage::Trunk => {
            canonical_bytes(&model.trunk_forward(&img).map_err(e)?).map_err(|e| e.to_string())?
        }
        PipelineStage::Branches => {
            let t = model.trunk_forward(&img).map_err(e)?;
            let mut out = Vec::new();
            for b in model.all_branches(&t).map_err(e)? {
                crate::qtensor::write_canonical(&b, &mut out).map_err(|e| e.to_string())?;
            }
            out
        }
        PipelineStage::Pose => pose_bytes(model.forward(&img).map_err(e)?),
        PipelineStage::Fallback => pose_bytes(model.fallback_forward(&img).map_err(e)?),
    };
    Ok(crate::sha256_hex(&bytes))
}

fn check_pipeline(v: &PipelineVector) -> Result<String, String> {
    let model = Model::generate(NetworkPlan::toy(v.n_branches), v.weights_seed)
        .map_err(|e| e.to_string())?;
    let got = pipeline_digest(&model, v)?;
    if got != v.sha256 {
        return Err(format!("sha256 {got}, expected {}", v.sha256));
    }
    Ok(format!("sha256 {}", &got[..16]))
}

fn random_params(rng: &mut ChaCha20Rng, weights: usize, cout: usize) -> QuantLayerParams {
    let lo = rng.random_range(-128..=0i16) as i8;
    let clamp = if rng.random_bool(0.5) {
        QuantLayerParams::LINEAR
    } else {
        (lo, rng.random_range(i16::from(lo)..=127) as i8)
    };
    QuantLayerParams {
        weights: (0..weights).map(|_| rng.random()).collect(),
        bias: (0..cout)
            .map(|_| rng.random_range(-40_000..=40_000))
            .collect(),
        requant_shift: rng.random_range(0..=14),
        activation_clamp: clamp,
        weight_scale_shift: rng.random_range(-8..=0),
    }
}

fn random_tensor(rng: &mut ChaCha20Rng, shape: Shape) -> QuantTensor {
    let data = (0..shape.len()).map(|_| rng.random()).collect();
    QuantTensor::new(shape, data, rng.random_range(-8..=0)).expect("length matches shape")
}

/// Fast kernels against the naive reference on random layers.
fn check_layer_oracle(settings: &OracleSettings) -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
    let mut compared = 0usize;
    for case in 0..settings.layer_cases {
        let shape = Shape::new(
            rng.random_range(1..=6),
            rng.random_range(1..=9),
            rng.random_range(1..=9),
        );
        let x = random_tensor(&mut rng, shape);
        let stride = rng.random_range(1..=2);
        let kind = [ConvKind::Standard, ConvKind::Depthwise, ConvKind::Pointwise][case % 3];
        let cout = if kind == ConvKind::Depthwise {
            shape.channels
        } else {
            rng.random_range(1..=6)
        };
        let wlen = match kind {
            ConvKind::Standard => cout * shape.channels * 9,
            ConvKind::Depthwise => cout * 9,
            ConvKind::Pointwise => cout * shape.channels,
        };
        let p = random_params(&mut rng, wlen, cout);
        let fast = conv2d_q(&x, &p, stride, kind).map_err(|e| e.to_string())?;
        let slow = reference::conv2d(&x, &p, stride, kind).map_err(|e| e.to_string())?;
        if !fast.bit_identical(&slow) {
            return Err(format!(
                "case {case}: {kind:?} conv on {shape} stride {stride} differs"
            ));
        }
        let fc = random_params(&mut rng, x.data().len() * cout, cout);
        if !fully_connected_q(&x, &fc)
            .map_err(|e| e.to_string())?
            .bit_identical(&reference::fully_connected(&x, &fc).map_err(|e| e.to_string())?)
        {
            return Err(format!("case {case}: dense layer on {shape} differs"));
        }
        if !global_avg_pool_q(&x)
            .map_err(|e| e.to_string())?
            .bit_identical(&reference::global_avg_pool(&x).map_err(|e| e.to_string())?)
        {
            return Err(format!("case {case}: pooling on {shape} differs"));
        }
        compared += fast.data().len();
    }
    Ok(format!(
        "{} cases, {compared} conv outputs identical",
        settings.layer_cases
    ))
}

fn reference_block(b: &QuantBlock, x: &QuantTensor) -> Result<QuantTensor, String> {
    let s = |e: crate::qtensor::TensorError| e.to_string();
    match &b.layers {
        BlockLayers::Plain { conv } => {
            reference::conv2d(x, conv, b.stride, ConvKind::Standard).map_err(s)
        }
        BlockLayers::InvertedResidual {
            expand,
            depthwise,
            project,
        } => {
            let h = match expand {
                Some(e) => reference::conv2d(x, e, 1, ConvKind::Pointwise).map_err(s)?,
                None => x.clone(),
            };
            let h = reference::conv2d(&h, depthwise, b.stride, ConvKind::Depthwise).map_err(s)?;
            let y = reference::conv2d(&h, project, 1, ConvKind::Pointwise).map_err(s)?;
            if b.stride == 1 && y.shape() == x.shape() {
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&a, &c)| (i16::from(a) + i16::from(c)).clamp(-128, 127) as i8)
                    .collect();
                QuantTensor::new(x.shape(), data, x.scale_shift()).map_err(s)
            } else {
                Ok(y)
            }
        }
    }
}

fn reference_blocks(blocks: &[QuantBlock], x: &QuantTensor) -> Result<QuantTensor, String> {
    blocks
        .iter()
        .try_fold(x.clone(), |cur, b| reference_block(b, &cur))
}

/// Whole split pipeline on reference kernels against the fast path.
fn check_pipeline_oracle(settings: &OracleSettings) -> Result<String, String> {
    let model = Model::generate(NetworkPlan::toy(8), settings.seed).map_err(|e| e.to_string())?;
    let w = model.weights();
    for f in 0..settings.pipeline_frames {
        let img = synthetic_frame(model.plan().input_shape, settings.seed, f);
        let t = reference_blocks(&w.trunk, &img)?;
        let branches = w
            .branches
            .iter()
            .map(|b| reference_blocks(b, &t))
            .collect::<Result<Vec<_>, _>>()?;
        let h = concat_channels(&branches).map_err(|e| e.to_string())?;
        let x = reference_blocks(&w.head.blocks, &h)?;
        let pooled = reference::global_avg_pool(&x).map_err(|e| e.to_string())?;
        let out = reference::fully_connected(&pooled, &w.head.fc).map_err(|e| e.to_string())?;
        let want = PoseEstimate::from_tensor(&out).map_err(|e| e.to_string())?;
        let got = model.forward(&img).map_err(|e| e.to_string())?;
        if want != got {
            return Err(format!(
                "frame {f}: reference pose {:?}, fast pose {:?}",
                want.raw, got.raw
            ));
        }
        let fast_t = model.trunk_forward(&img).map_err(|e| e.to_string())?;
        if !fast_t.bit_identical(&t) {
            return Err(format!("frame {f}: trunk output differs"));
        }
    }
    Ok(format!(
        "{} frames identical end to end",
        settings.pipeline_frames
    ))
}

/// Honest branch outputs match; every single-bit flip of a sampled branch
/// is a mismatch.
fn check_bitflips(settings: &OracleSettings) -> Result<String, String> {
    let model = Model::generate(NetworkPlan::toy(8), settings.seed).map_err(|e| e.to_string())?;
    let mut flips = 0;
    for f in 0..settings.bitflip_frames {
        let img = synthetic_frame(model.plan().input_shape, settings.seed.wrapping_add(1), f);
        let t = model.trunk_forward(&img).map_err(|e| e.to_string())?;
        let honest = model.all_branches(&t).map_err(|e| e.to_string())?;
        let j = (f as usize % 8) + 1;
        let local = model.branch_forward(j, &t).map_err(|e| e.to_string())?;
        if verify_branch(&local, &honest[j - 1]) != Verdict::Match {
            return Err(format!("frame {f}: honest branch {j} mismatched"));
        }
        for bit in 0..local.data().len() * 8 {
            let mut bad = honest[j - 1].clone();
            bad.data_mut()[bit / 8] ^= (1u8 << (bit % 8)) as i8;
            if verify_branch(&local, &bad) != Verdict::Mismatch {
                return Err(format!(
                    "frame {f}: flip of bit {bit} in branch {j} matched"
                ));
            }
            flips += 1;
        }
    }
    Ok(format!(
        "{} honest matches, {flips} flips detected",
        settings.bitflip_frames
    ))
}

/// Runs every check; failures are reported, never panicked on.
pub fn run(golden: &Golden) -> Report {
    let mut r = Report { checks: Vec::new() };
    for v in &golden.wire {
        r.push(format!("wire/{}", v.name), check_wire(v));
    }
    for v in &golden.keystream {
        r.push(format!("keystream/{}", v.name), check_keystream(v));
    }
    for v in &golden.draws {
        r.push(format!("draws/{}", v.name), check_draws(v));
    }
    for v in &golden.pipeline {
        r.push(format!("pipeline/{}", v.name), check_pipeline(v));
    }
    r.push("oracle/layers", check_layer_oracle(&golden.oracle));
    r.push("oracle/pipeline", check_pipeline_oracle(&golden.oracle));
    r.push("oracle/bitflips", check_bitflips(&golden.oracle));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_golden_passes() {
        let r = run(&Golden::bundled());
        assert!(r.passed(), "{}", r.render());
        assert!(r.checks.len() >= 10);
    }

    #[test]
    fn corrupted_vector_is_named() {
        let mut g = Golden::bundled();
        g.draws[0].draws[3] += 1;
        let lsb = g.wire[1].hex.pop().unwrap();
        g.wire[1].hex.push(if lsb == '0' { '1' } else { '0' });
        let r = run(&g);
        let failed: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(
            failed,
            [
                format!("wire/{}", g.wire[1].name),
                format!("draws/{}", g.draws[0].name)
            ]
        );
        assert!(r.render().contains("FAIL draws/"));
    }

    #[test]
    fn malformed_golden_is_an_error() {
        assert!(Golden::from_json("{\"wire\": []}").is_err());
    }
}
