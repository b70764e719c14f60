use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::qtensor::{Shape, CANONICAL_HEADER_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Standard 3×3 convolution followed by a ReLU clamp.
    PlainConv,
    /// Pointwise expansion (skipped when `expansion == 1`), depthwise 3×3,
    /// linear pointwise projection, residual add when shapes allow.
    InvertedResidual,
}

/// One block of the network. Block `id` ends at cut point `id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub id: u8,
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    #[serde(default = "one")]
    pub expansion: usize,
    pub input_hw: (usize, usize),
}

fn one() -> usize {
    1
}

impl BlockSpec {
    pub fn output_hw(&self) -> (usize, usize) {
        let (h, w) = self.input_hw;
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn output_shape(&self) -> Shape {
        let (h, w) = self.output_hw();
        Shape::new(self.out_channels, h, w)
    }

    pub fn hidden_channels(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn has_expand(&self) -> bool {
        self.kind == BlockKind::InvertedResidual && self.expansion > 1
    }

    /// Unsplit multiply-accumulate count.
    pub fn macs(&self) -> u64 {
        self.macs_with(self.in_channels, 1)
    }

    /// MACs of one branch replica: `in_channels` consumed, every produced
    /// width divided by `parts`.
    pub(crate) fn macs_with(&self, in_channels: usize, parts: usize) -> u64 {
        let (h, w) = self.input_hw;
        let (ho, wo) = self.output_hw();
        let (in_px, out_px) = ((h * w) as u64, (ho * wo) as u64);
        let cin = in_channels as u64;
        let cout = (self.out_channels / parts) as u64;
        match self.kind {
            BlockKind::PlainConv => out_px * 9 * cin * cout,
            BlockKind::InvertedResidual => {
                let (expand, hidden) = if self.has_expand() {
                    let hidden = (self.hidden_channels() / parts) as u64;
                    (in_px * cin * hidden, hidden)
                } else {
                    (0, cin)
                };
                expand + out_px * 9 * hidden + out_px * hidden * cout
            }
        }
    }
}

/// Block-level description of the three-stage network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkPlan {
    pub blocks: Vec<BlockSpec>,
    /// Last trunk block.
    pub trunk_cut: u8,
    /// Last backbone block.
    pub head_cut: u8,
    pub n_branches: usize,
    pub input_shape: Shape,
    pub output_dim: usize,
}

/// Pose outputs: x, y, z, φ.
pub const POSE_DIM: usize = 4;

/// Grayscale camera frame.
pub const INPUT_SHAPE: Shape = Shape::new(1, 96, 160);

impl NetworkPlan {
    /// Nine-block MobileNetV2-style network used throughout the crate.
    ///
    /// Cut 3 is the first boundary whose tensor is smaller than the input;
    /// every backbone width is a multiple of 8 so `n_branches` may be 1, 2, 4 or 8.
    pub fn toy(n_branches: usize) -> Self {
        use BlockKind::*;
        let layout: [(BlockKind, usize, usize, usize, usize); 9] = [
            (PlainConv, 1, 8, 2, 1),
            (InvertedResidual, 8, 8, 1, 2),
            (InvertedResidual, 8, 12, 2, 2),
            (InvertedResidual, 12, 8, 2, 6),
            (InvertedResidual, 8, 8, 1, 1),
            (InvertedResidual, 8, 16, 2, 1),
            (InvertedResidual, 16, 32, 2, 1),
            (InvertedResidual, 32, 32, 1, 1),
            (PlainConv, 32, 32, 1, 1),
        ];
        Self::from_layout(INPUT_SHAPE, &layout, 3, 8, n_branches)
    }

    /// Builds consecutive blocks from `(kind, in, out, stride, expansion)` rows.
    pub fn from_layout(
        input_shape: Shape,
        layout: &[(BlockKind, usize, usize, usize, usize)],
        trunk_cut: u8,
        head_cut: u8,
        n_branches: usize,
    ) -> Self {
        let mut hw = (input_shape.height, input_shape.width);
        let blocks = layout
            .iter()
            .enumerate()
            .map(
                |(i, &(kind, in_channels, out_channels, stride, expansion))| {
                    let b = BlockSpec {
                        id: (i + 1) as u8,
                        kind,
                        in_channels,
                        out_channels,
                        stride,
                        expansion,
                        input_hw: hw,
                    };
                    hw = b.output_hw();
                    b
                },
            )
            .collect();
        Self {
            blocks,
            trunk_cut,
            head_cut,
            n_branches,
            input_shape,
            output_dim: POSE_DIM,
        }
    }

    pub fn with_branches(mut self, n: usize) -> Self {
        self.n_branches = n;
        self
    }

    pub fn with_cuts(mut self, trunk_cut: u8, head_cut: u8) -> Self {
        self.trunk_cut = trunk_cut;
        self.head_cut = head_cut;
        self
    }

    pub fn max_id(&self) -> u8 {
        self.blocks.len() as u8
    }

    pub fn trunk_blocks(&self) -> &[BlockSpec] {
        &self.blocks[..usize::from(self.trunk_cut)]
    }

    pub fn backbone_blocks(&self) -> &[BlockSpec] {
        &self.blocks[usize::from(self.trunk_cut)..usize::from(self.head_cut)]
    }

    pub fn head_blocks(&self) -> &[BlockSpec] {
        &self.blocks[usize::from(self.head_cut)..]
    }

    pub fn block(&self, id: u8) -> Option<&BlockSpec> {
        self.blocks.get(usize::from(id).checked_sub(1)?)
    }

    /// Shape of the tensor at boundary `cut_id`; 0 is the input image.
    pub fn boundary_shape(&self, cut_id: u8) -> Result<Shape, ModelError> {
        if cut_id == 0 {
            return Ok(self.input_shape);
        }
        self.block(cut_id)
            .map(BlockSpec::output_shape)
            .ok_or(ModelError::InvalidCut(cut_id))
    }

    /// Width of the final feature map, i.e. the dense head's input length.
    pub fn feature_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.out_channels)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |msg: String| Err(ModelError::InvalidPlan(msg));
        if self.blocks.is_empty() {
            return invalid("plan has no blocks".into());
        }
        if self.output_dim != POSE_DIM {
            return invalid(format!("output_dim must be {POSE_DIM}"));
        }
        if self.n_branches == 0 || self.n_branches > usize::from(u8::MAX) {
            return invalid("n_branches must be in 1..=255".into());
        }
        if !(1 <= self.trunk_cut
            && self.trunk_cut < self.head_cut
            && self.head_cut <= self.max_id())
        {
            return invalid(format!(
                "cuts must satisfy 1 <= trunk_cut < head_cut <= {}, got ({}, {})",
                self.max_id(),
                self.trunk_cut,
                self.head_cut
            ));
        }
        let mut channels = self.input_shape.channels;
        let mut hw = (self.input_shape.height, self.input_shape.width);
        for (i, b) in self.blocks.iter().enumerate() {
            if usize::from(b.id) != i + 1 {
                return invalid(format!(
                    "block ids must be consecutive from 1, found {} at {i}",
                    b.id
                ));
            }
            if b.in_channels != channels {
                return invalid(format!(
                    "block {} takes {} channels but receives {channels}",
                    b.id, b.in_channels
                ));
            }
            if b.input_hw != hw {
                return invalid(format!(
                    "block {} input_hw {:?} should be {hw:?}",
                    b.id, b.input_hw
                ));
            }
            if !(b.stride == 1 || b.stride == 2) || b.expansion == 0 || b.out_channels == 0 {
                return invalid(format!(
                    "block {} needs stride 1 or 2 and positive widths",
                    b.id
                ));
            }
            channels = b.out_channels;
            hw = b.output_hw();
        }
        let n = self.n_branches;
        for (pos, b) in self.backbone_blocks().iter().enumerate() {
            if b.out_channels % n != 0 {
                return Err(ModelError::Indivisible {
                    block: b.id,
                    width: b.out_channels,
                    branches: n,
                });
            }
            if b.has_expand() && b.hidden_channels() % n != 0 {
                return Err(ModelError::Indivisible {
                    block: b.id,
                    width: b.hidden_channels(),
                    branches: n,
                });
            }
            if pos == 0 && n > 1 && b.kind == BlockKind::InvertedResidual && !b.has_expand() {
                return invalid(format!(
                    "first backbone block {} must open with a channel-mixing layer to be split",
                    b.id
                ));
            }
        }
        Ok(())
    }
}

/// Multiply-accumulate counts per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMacs {
    pub trunk: u64,
    pub one_branch: u64,
    pub all_branches: u64,
    pub head: u64,
}

impl StageMacs {
    pub fn total(&self) -> u64 {
        self.trunk + self.all_branches + self.head
    }
}

/// Exact MACs per stage from block dimensions. The head includes its dense layer.
pub fn count_macs(plan: &NetworkPlan) -> StageMacs {
    let n = plan.n_branches.max(1);
    let trunk = plan.trunk_blocks().iter().map(BlockSpec::macs).sum();
    let one_branch = branch_block_macs(plan).iter().sum::<u64>();
    let head = plan.head_blocks().iter().map(BlockSpec::macs).sum::<u64>()
        + (plan.feature_channels() * plan.output_dim) as u64;
    StageMacs {
        trunk,
        one_branch,
        all_branches: one_branch * n as u64,
        head,
    }
}

/// MACs of each backbone block in a single branch replica.
pub fn branch_block_macs(plan: &NetworkPlan) -> Vec<u64> {
    let n = plan.n_branches.max(1);
    plan.backbone_blocks()
        .iter()
        .enumerate()
        .map(|(pos, b)| {
            let cin = if pos == 0 {
                b.in_channels
            } else {
                b.in_channels / n
            };
            b.macs_with(cin, n)
        })
        .collect()
}

/// MACs of the unsplit backbone.
pub fn unsplit_backbone_macs(plan: &NetworkPlan) -> u64 {
    plan.backbone_blocks().iter().map(BlockSpec::macs).sum()
}

/// Cumulative unsplit MACs at each cut `1..=max_id`.
pub fn cumulative_macs(plan: &NetworkPlan) -> Vec<u64> {
    plan.blocks
        .iter()
        .scan(0u64, |acc, b| {
            *acc += b.macs();
            Some(*acc)
        })
        .collect()
}

/// Canonical encoding length of the tensor at boundary `cut_id`.
pub fn tensor_size_at_cut(plan: &NetworkPlan, cut_id: u8) -> Result<usize, ModelError> {
    Ok(CANONICAL_HEADER_LEN + plan.boundary_shape(cut_id)?.len())
}
