use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::plan::{BlockKind, BlockSpec, NetworkPlan};
use super::{synthetic_frame, ModelError, POSE_SCALE_SHIFT};
use crate::qtensor::{
    add_saturating, conv2d_accumulate, conv2d_q, fully_connected_q, global_avg_pool_q, ConvKind,
    QuantLayerParams, QuantTensor, TensorError,
};

/// Layers of one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockLayers {
    Plain {
        conv: QuantLayerParams,
    },
    InvertedResidual {
        expand: Option<QuantLayerParams>,
        depthwise: QuantLayerParams,
        project: QuantLayerParams,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantBlock {
    pub stride: usize,
    pub layers: BlockLayers,
}

impl QuantBlock {
    pub fn forward(&self, x: &QuantTensor) -> Result<QuantTensor, TensorError> {
        match &self.layers {
            BlockLayers::Plain { conv } => conv2d_q(x, conv, self.stride, ConvKind::Standard),
            BlockLayers::InvertedResidual {
                expand,
                depthwise,
                project,
            } => {
                let hidden = match expand {
                    Some(e) => conv2d_q(x, e, 1, ConvKind::Pointwise)?,
                    None => x.clone(),
                };
                let hidden = conv2d_q(&hidden, depthwise, self.stride, ConvKind::Depthwise)?;
                let y = conv2d_q(&hidden, project, 1, ConvKind::Pointwise)?;
                if self.stride == 1 && y.shape() == x.shape() {
                    add_saturating(x, &y)
                } else {
                    Ok(y)
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.layers {
            BlockLayers::Plain { conv } => conv.param_count(),
            BlockLayers::InvertedResidual {
                expand,
                depthwise,
                project,
            } => {
                expand.as_ref().map_or(0, QuantLayerParams::param_count)
                    + depthwise.param_count()
                    + project.param_count()
            }
        }
    }
}

pub(crate) fn run_blocks(
    blocks: &[QuantBlock],
    x: &QuantTensor,
) -> Result<QuantTensor, TensorError> {
    let mut cur = x.clone();
    for b in blocks {
        cur = b.forward(&cur)?;
    }
    Ok(cur)
}

/// Dense tail: blocks, global pooling, fully connected layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub blocks: Vec<QuantBlock>,
    pub fc: QuantLayerParams,
}

impl HeadWeights {
    pub fn forward(&self, features: &QuantTensor) -> Result<QuantTensor, TensorError> {
        let x = run_blocks(&self.blocks, features)?;
        fully_connected_q(&global_avg_pool_q(&x)?, &self.fc)
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(QuantBlock::param_count)
            .sum::<usize>()
            + self.fc.param_count()
    }
}

/// Single-device network before channel splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseWeights {
    pub trunk: Vec<QuantBlock>,
    pub backbone: Vec<QuantBlock>,
    pub head: HeadWeights,
}

/// Everything the edge and fog need: trunk, one block list per branch,
/// head, and the standalone fallback network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub trunk: Vec<QuantBlock>,
    pub branches: Vec<Vec<QuantBlock>>,
    pub head: HeadWeights,
    pub fallback: HeadWeights,
}

/// Layout of the fallback network: four blocks, spatial size /16.
pub const FALLBACK_LAYOUT: [(BlockKind, usize, usize, usize, usize); 4] = [
    (BlockKind::PlainConv, 1, 4, 2, 1),
    (BlockKind::PlainConv, 4, 8, 2, 1),
    (BlockKind::InvertedResidual, 8, 16, 2, 2),
    (BlockKind::InvertedResidual, 16, 16, 2, 1),
];

const ACTIVATION_TARGET: u64 = 32;

/// Seeded weight generator. Each layer's requantization shift is chosen so
/// the mean accumulator magnitude on a calibration frame lands near
/// [`ACTIVATION_TARGET`]; weight exponents are set so every hidden tensor
/// keeps the input's exponent.
struct Generator {
    rng: ChaCha20Rng,
}

impl Generator {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    fn layer(
        &mut self,
        x: &QuantTensor,
        weight_len: usize,
        cout: usize,
        calibrate: impl Fn(&[i8], &[i32]) -> Result<Vec<i32>, TensorError>,
        clamp: (i8, i8),
        out_scale: Option<i8>,
    ) -> Result<QuantLayerParams, TensorError> {
        let weights: Vec<i8> = (0..weight_len)
            .map(|_| self.rng.random_range(-127..=127))
            .collect();
        let acc = calibrate(&weights, &vec![0; cout])?;
        let mean_abs =
            acc.iter().map(|a| u64::from(a.unsigned_abs())).sum::<u64>() / acc.len().max(1) as u64;
        let half = (mean_abs / 2).min(i32::MAX as u64) as i32;
        let bias = (0..cout)
            .map(|_| self.rng.random_range(-half..=half))
            .collect();
        let ratio = mean_abs / ACTIVATION_TARGET;
        let requant_shift = if ratio == 0 {
            0
        } else {
            (63 - ratio.leading_zeros()).min(31) as u8
        };
        let weight_scale_shift = match out_scale {
            Some(target) => target - x.scale_shift() - requant_shift as i8,
            None => -(requant_shift as i8),
        };
        Ok(QuantLayerParams {
            weights,
            bias,
            requant_shift,
            activation_clamp: clamp,
            weight_scale_shift,
        })
    }

    fn conv(
        &mut self,
        x: &QuantTensor,
        cout: usize,
        stride: usize,
        kind: ConvKind,
        clamp: (i8, i8),
    ) -> Result<(QuantLayerParams, QuantTensor), TensorError> {
        let cin = x.shape().channels;
        let len = match kind {
            ConvKind::Standard => cout * cin * 9,
            ConvKind::Depthwise => cin * 9,
            ConvKind::Pointwise => cout * cin,
        };
        let p = self.layer(
            x,
            len,
            cout,
            |w, b| conv2d_accumulate(x, w, b, stride, kind).map(|(_, acc)| acc),
            clamp,
            None,
        )?;
        let y = conv2d_q(x, &p, stride, kind)?;
        Ok((p, y))
    }

    fn block(
        &mut self,
        spec: &BlockSpec,
        x: &QuantTensor,
    ) -> Result<(QuantBlock, QuantTensor), TensorError> {
        let layers = match spec.kind {
            BlockKind::PlainConv => {
                let (conv, _) = self.conv(
                    x,
                    spec.out_channels,
                    spec.stride,
                    ConvKind::Standard,
                    QuantLayerParams::RELU,
                )?;
                BlockLayers::Plain { conv }
            }
            BlockKind::InvertedResidual => {
                let (expand, hidden) = if spec.has_expand() {
                    let (p, h) = self.conv(
                        x,
                        spec.hidden_channels(),
                        1,
                        ConvKind::Pointwise,
                        QuantLayerParams::RELU,
                    )?;
                    (Some(p), h)
                } else {
                    (None, x.clone())
                };
                let hid = hidden.shape().channels;
                let (depthwise, hidden) = self.conv(
                    &hidden,
                    hid,
                    spec.stride,
                    ConvKind::Depthwise,
                    QuantLayerParams::RELU,
                )?;
                let (project, _) = self.conv(
                    &hidden,
                    spec.out_channels,
                    1,
                    ConvKind::Pointwise,
                    QuantLayerParams::LINEAR,
                )?;
                BlockLayers::InvertedResidual {
                    expand,
                    depthwise,
                    project,
                }
            }
        };
        let block = QuantBlock {
            stride: spec.stride,
            layers,
        };
        let y = block.forward(x)?;
        Ok((block, y))
    }

    fn blocks(
        &mut self,
        specs: &[BlockSpec],
        x: &QuantTensor,
    ) -> Result<(Vec<QuantBlock>, QuantTensor), TensorError> {
        let mut cur = x.clone();
        let mut out = Vec::with_capacity(specs.len());
        for s in specs {
            let (b, y) = self.block(s, &cur)?;
            out.push(b);
            cur = y;
        }
        Ok((out, cur))
    }

    fn head(
        &mut self,
        specs: &[BlockSpec],
        x: &QuantTensor,
        outputs: usize,
    ) -> Result<HeadWeights, TensorError> {
        let (blocks, features) = self.blocks(specs, x)?;
        let pooled = global_avg_pool_q(&features)?;
        let n = pooled.data().len();
        let fc = self.layer(
            &pooled,
            outputs * n,
            outputs,
            |w, b| {
                Ok(w.chunks_exact(n)
                    .zip(b)
                    .map(|(row, &bias)| {
                        row.iter().zip(pooled.data()).fold(bias, |a, (&wv, &xv)| {
                            a.wrapping_add(i32::from(wv) * i32::from(xv))
                        })
                    })
                    .collect())
            },
            QuantLayerParams::LINEAR,
            Some(POSE_SCALE_SHIFT),
        )?;
        Ok(HeadWeights { blocks, fc })
    }
}

impl BaseWeights {
    /// Seeded single-device weights, calibrated on one synthetic frame.
    pub fn generate(plan: &NetworkPlan, seed: u64) -> Result<Self, ModelError> {
        plan.validate()?;
        let calib = synthetic_frame(plan.input_shape, seed ^ 0x5eed_ca1b, 0);
        let mut gen = Generator::new(seed, 0);
        let (trunk, t) = gen.blocks(plan.trunk_blocks(), &calib)?;
        let (backbone, b) = gen.blocks(plan.backbone_blocks(), &t)?;
        let head = gen.head(plan.head_blocks(), &b, plan.output_dim)?;
        Ok(Self {
            trunk,
            backbone,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.trunk
            .iter()
            .chain(&self.backbone)
            .map(QuantBlock::param_count)
            .sum::<usize>()
            + self.head.param_count()
    }
}

impl ModelWeights {
    /// Generates base weights, splits the backbone into the plan's
    /// branch count, and adds a fallback network from an independent stream.
    pub fn generate(plan: &NetworkPlan, seed: u64) -> Result<Self, ModelError> {
        let base = BaseWeights::generate(plan, seed)?;
        let branches = split_backbone(plan, &base.backbone)?;
        let fallback = generate_fallback(plan, seed)?;
        Ok(Self {
            trunk: base.trunk,
            branches,
            head: base.head,
            fallback,
        })
    }

    /// Parameters of the distributed model (trunk, every branch, head).
    pub fn param_count(&self) -> usize {
        self.trunk
            .iter()
            .chain(self.branches.iter().flatten())
            .map(QuantBlock::param_count)
            .sum::<usize>()
            + self.head.param_count()
    }

    pub fn fallback_param_count(&self) -> usize {
        self.fallback.param_count()
    }
}

pub fn fallback_specs(plan: &NetworkPlan) -> Vec<BlockSpec> {
    NetworkPlan::from_layout(plan.input_shape, &FALLBACK_LAYOUT, 1, 2, 1).blocks
}

/// MACs of one fallback inference, dense layer included.
pub fn fallback_macs(plan: &NetworkPlan) -> u64 {
    let specs = fallback_specs(plan);
    let features = specs.last().map_or(0, |b| b.out_channels);
    specs.iter().map(BlockSpec::macs).sum::<u64>() + (features * plan.output_dim) as u64
}

fn generate_fallback(plan: &NetworkPlan, seed: u64) -> Result<HeadWeights, ModelError> {
    let calib = synthetic_frame(plan.input_shape, seed ^ 0x5eed_ca1b, 0);
    let mut gen = Generator::new(seed, 1);
    Ok(gen.head(&fallback_specs(plan), &calib, plan.output_dim)?)
}

fn part(total: usize, n: usize, i: usize) -> Range<usize> {
    let w = total / n;
    i * w..(i + 1) * w
}

fn slice_rows(
    p: &QuantLayerParams,
    row_len: usize,
    rows: Range<usize>,
    cols: Range<usize>,
    per: usize,
) -> QuantLayerParams {
    let mut weights = Vec::with_capacity(rows.len() * cols.len() * per);
    for r in rows.clone() {
        for c in cols.clone() {
            let at = (r * row_len + c) * per;
            weights.extend_from_slice(&p.weights[at..at + per]);
        }
    }
    QuantLayerParams {
        weights,
        bias: p.bias[rows].to_vec(),
        ..p.clone()
    }
}

fn slice_depthwise(p: &QuantLayerParams, channels: Range<usize>) -> QuantLayerParams {
    QuantLayerParams {
        weights: p.weights[channels.start * 9..channels.end * 9].to_vec(),
        bias: p.bias[channels].to_vec(),
        ..p.clone()
    }
}

/// Splits every backbone layer's output channels into `n_branches` equal
/// slices. A branch's first layer reads the whole trunk output; later
/// layers read only the branch's own slice, so branches never exchange
/// data. Requantization settings are inherited unchanged.
pub fn split_backbone(
    plan: &NetworkPlan,
    base: &[QuantBlock],
) -> Result<Vec<Vec<QuantBlock>>, ModelError> {
    plan.validate()?;
    let specs = plan.backbone_blocks();
    if specs.len() != base.len() {
        return Err(ModelError::WeightsMismatch(format!(
            "plan has {} backbone blocks, weights have {}",
            specs.len(),
            base.len()
        )));
    }
    let n = plan.n_branches;
    let mut branches = Vec::with_capacity(n);
    for i in 0..n {
        let mut blocks = Vec::with_capacity(specs.len());
        for (pos, (spec, block)) in specs.iter().zip(base).enumerate() {
            let cin = spec.in_channels;
            let inputs = if pos == 0 { 0..cin } else { part(cin, n, i) };
            let outputs = part(spec.out_channels, n, i);
            let layers = match (&block.layers, spec.kind) {
                (BlockLayers::Plain { conv }, BlockKind::PlainConv) => BlockLayers::Plain {
                    conv: slice_rows(conv, cin, outputs, inputs, 9),
                },
                (
                    BlockLayers::InvertedResidual {
                        expand,
                        depthwise,
                        project,
                    },
                    BlockKind::InvertedResidual,
                ) => match expand {
                    Some(e) => {
                        let hid = spec.hidden_channels();
                        let hidden = part(hid, n, i);
                        BlockLayers::InvertedResidual {
                            expand: Some(slice_rows(e, cin, hidden.clone(), inputs, 1)),
                            depthwise: slice_depthwise(depthwise, hidden.clone()),
                            project: slice_rows(project, hid, outputs, hidden, 1),
                        }
                    }
                    None => BlockLayers::InvertedResidual {
                        expand: None,
                        depthwise: slice_depthwise(depthwise, inputs.clone()),
                        project: slice_rows(project, cin, outputs, inputs, 1),
                    },
                },
                _ => {
                    return Err(ModelError::WeightsMismatch(format!(
                        "block {} weights do not match its kind",
                        spec.id
                    )))
                }
            };
            blocks.push(QuantBlock {
                stride: block.stride,
                layers,
            });
        }
        branches.push(blocks);
    }
    Ok(branches)
}

/// Zeroes every weight and bias; used for degenerate-input tests.
pub fn zeroed(mut w: ModelWeights) -> ModelWeights {
    fn zero_layer(p: &mut QuantLayerParams) {
        p.weights.iter_mut().for_each(|v| *v = 0);
        p.bias.iter_mut().for_each(|v| *v = 0);
    }
    fn zero_block(b: &mut QuantBlock) {
        match &mut b.layers {
            BlockLayers::Plain { conv } => zero_layer(conv),
            BlockLayers::InvertedResidual {
                expand,
                depthwise,
                project,
            } => {
                if let Some(e) = expand {
                    zero_layer(e);
                }
                zero_layer(depthwise);
                zero_layer(project);
            }
        }
    }
    w.trunk.iter_mut().for_each(zero_block);
    w.branches.iter_mut().flatten().for_each(zero_block);
    w.head.blocks.iter_mut().for_each(zero_block);
    zero_layer(&mut w.head.fc);
    w.fallback.blocks.iter_mut().for_each(zero_block);
    zero_layer(&mut w.fallback.fc);
    w
}
